import math

import numpy as np
import pytest
from scipy.linalg import hadamard

from dahr.estimators import HuberObjective, ShiftedLossSpec, centralized_ahr
from dahr.highdim import (
    LambdaSchedule,
    PenaltyConfig,
    dc_l1_ahr,
    dist_reg_ahr,
    l1_ahr_fit,
    l1_ahr_solve,
    lambda_grid,
    lambda_max,
    lasso_fit,
    robust_scale,
    tune_tau_sparse,
)
from dahr.model_core import InvalidArgumentError, Shard
from dahr.runtime import CommLedger, gather_gradients
from dahr.solvers import soft_threshold

from conftest import random_shard, random_shards


def sparse_beta(p, s, value=1.5):
    b = np.zeros(p)
    b[:s] = value
    return b


def kkt_residual(grad, beta, lam, unpenalized=(0,)):
    """Largest violation of the l1 stationarity conditions."""
    worst = 0.0
    for j, (g, b) in enumerate(zip(grad, beta)):
        if j in unpenalized:
            worst = max(worst, abs(g))
        elif b == 0:
            worst = max(worst, abs(g) - lam)
        else:
            worst = max(worst, abs(g + lam * np.sign(b)))
    return worst


def test_penalty_config():
    assert PenaltyConfig(0.1).unpenalized == (0,)
    with pytest.raises(InvalidArgumentError):
        PenaltyConfig(-1.0)


def test_zero_penalty_matches_centralized(rng):
    sh = random_shard(rng, 200, 6, noise=2.0)
    a = l1_ahr_fit(sh, 1.5, 0.0, step_tol=1e-10, max_iter=100000)
    b = centralized_ahr(sh, tau=1.5, grad_tol=1e-9)
    assert np.linalg.norm(a - b) <= 1e-5


def test_dead_zone(rng):
    sh = random_shard(rng, 50, 8)
    lam = 1.01 * lambda_max(sh, 1.0)
    beta = l1_ahr_fit(sh, 1.0, lam, step_tol=1e-9)
    assert np.all(beta[1:] == 0)
    smaller = l1_ahr_fit(sh, 1.0, 0.5 * lam, step_tol=1e-9)
    assert np.any(smaller[1:] != 0)


def test_noiseless_sparse_support_recovery(rng):
    truth = sparse_beta(50, 3)
    sh = random_shard(rng, 200, 50, noise=0.0, beta=truth)
    beta = l1_ahr_fit(sh, 1.0, 1e-5, step_tol=1e-10, max_iter=20000)
    assert set(np.flatnonzero(np.abs(beta) > 1e-3)) == {0, 1, 2}
    assert np.linalg.norm(beta - truth) <= 1e-3


def test_orthonormal_lasso_is_soft_threshold(rng):
    n, p = 16, 6
    X = hadamard(n)[:, :p].astype(float)
    y = rng.standard_normal(n) * 3
    sh = Shard(0, y, X)
    ols = X.T @ y / n
    lam = 0.4
    beta = lasso_fit(sh, lam, step_tol=1e-12, max_iter=100000)
    expected = np.concatenate([[ols[0]], soft_threshold(ols[1:], lam)])
    np.testing.assert_allclose(beta, expected, atol=1e-6)


def test_lasso_needs_penalty_when_wide(rng):
    sh = random_shard(rng, 10, 30)
    with pytest.raises(InvalidArgumentError):
        lasso_fit(sh, 0.0)


def test_kkt_at_solution(rng):
    sh = random_shard(rng, 60, 40, noise=2.0)
    for tau, lam in ((1.0, 0.05), (math.inf, 0.1), (0.5, 0.01)):
        beta = l1_ahr_fit(sh, tau, lam, step_tol=1e-8, max_iter=50000)
        grad = HuberObjective(sh.y, sh.X, tau).value_and_grad(beta)[1]
        assert kkt_residual(grad, beta, lam) <= 1e-3


def test_schedule_monotone_with_floor():
    sch = LambdaSchedule(1.0, 2.0, 0.8, 5, 1000, 250, 2500)
    vals = [sch(t) for t in range(1, 200)]
    assert all(b <= a for a, b in zip(vals, vals[1:]))
    assert vals[-1] == pytest.approx(sch.lambda_star, rel=1e-3)
    assert sch.lambda_star == pytest.approx(0.8 * math.sqrt(math.log(1000) / 2500))
    with pytest.raises(InvalidArgumentError):
        LambdaSchedule(0.0, 1.0, 1.0, 5, 100, 50, 500)


def test_lambda_grid():
    g = lambda_grid(2.0, 5, 0.01)
    assert g[0] == 2.0 and g[-1] == pytest.approx(0.02)
    assert np.all(np.diff(g) < 0)


def test_robust_scale_normal():
    x = np.random.default_rng(0).standard_normal(100000) * 2
    assert robust_scale(x) == pytest.approx(2.0, rel=0.02)


def test_tune_tau_sparse(rng):
    r = rng.standard_normal(300)
    tau = tune_tau_sparse(r, 4, 1000)
    lhs = np.sum(np.minimum(r * r, tau * tau)) / tau**2 / (300 - 4)
    assert lhs == pytest.approx(math.log(1000) / 300, rel=1e-8)
    with pytest.raises(InvalidArgumentError):
        tune_tau_sparse(r, 300, 1000)


def test_dist_reg_single_shard_matches_local(rng):
    sh = random_shard(rng, 80, 30, noise=1.0, beta=sparse_beta(30, 3))
    beta0 = np.zeros(30)
    a, trace = dist_reg_ahr([sh], 1.2, 1.2, 0.05, 1, beta0, step_tol=1e-10, max_iter=50000)
    b = l1_ahr_fit(sh, 1.2, 0.05, beta0, step_tol=1e-10, max_iter=50000)
    assert np.linalg.norm(a - b) <= 1e-5
    assert trace.n_rounds == 1


def test_dist_reg_noiseless_support_after_one_round(rng):
    truth = sparse_beta(60, 3)
    shards, _ = random_shards(rng, 4, 100, 60, noise=0.0, beta=truth)
    ledger = CommLedger()
    beta0 = lasso_fit(shards[0], 0.1)
    beta, trace = dist_reg_ahr(shards, 1.0, 2.0, 0.05, 1, beta0, ledger)
    assert set(np.flatnonzero(beta)) == {0, 1, 2}
    assert ledger.values_sent == 2 * 3 * 60


def test_dist_reg_rounds_are_fixed_and_warm_started(rng):
    shards, _ = random_shards(rng, 3, 60, 40, beta=sparse_beta(40, 3))
    sch = LambdaSchedule(1.0, 1.0, 1.0, 3, 40, 60, 180)
    beta, trace = dist_reg_ahr(shards, 1.0, 1.7, sch, 3, np.zeros(40))
    assert trace.n_rounds == 3
    assert trace.ledger.values_sent == 2 * 2 * 40 * 3
    np.testing.assert_array_equal(trace.rounds[-1].beta, beta)


def test_dist_reg_kkt(rng):
    shards, _ = random_shards(rng, 3, 60, 40, noise=1.5, beta=sparse_beta(40, 3))
    beta0 = np.zeros(40)
    beta1, _ = dist_reg_ahr(shards, 1.0, 1.7, 0.08, 1, beta0, step_tol=1e-9, max_iter=50000)
    g = gather_gradients(shards, beta0, 1.7).mean_gradient
    grad = ShiftedLossSpec.build(shards[0], 1.0, beta0, g).objective().value_and_grad(beta1)[1]
    assert kkt_residual(grad, beta1, 0.08) <= 1e-3


def test_dist_reg_invalid(rng):
    shards, _ = random_shards(rng, 2, 20, 5)
    with pytest.raises(InvalidArgumentError):
        dist_reg_ahr(shards, 2.0, 1.0, 0.1, 1, np.zeros(5))
    with pytest.raises(InvalidArgumentError):
        dist_reg_ahr(shards, 1.0, 1.0, 0.1, 0, np.zeros(5))


def test_dc_l1_ahr(rng):
    sh = random_shard(rng, 50, 20, beta=sparse_beta(20, 2))
    local = l1_ahr_fit(sh, 1.0, 0.1)
    np.testing.assert_array_equal(dc_l1_ahr([sh], 1.0, 0.1), local)
    np.testing.assert_allclose(dc_l1_ahr([sh, sh, sh], 1.0, 0.1), local)


def test_solve_report_records_phi(rng):
    sh = random_shard(rng, 50, 20)
    rep = l1_ahr_solve(sh, 1.0, 0.1)
    assert rep.final_phi >= 1e-4 and rep.converged
