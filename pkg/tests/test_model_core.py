import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dahr.model_core import (
    InvalidArgumentError,
    RobustConfig,
    Shard,
    huber_loss,
    huber_psi,
    shard_gradient,
    shard_loss,
    shard_loss_and_gradient,
)

from conftest import random_shard

finite = st.floats(-1e3, 1e3, allow_nan=False)
positive = st.floats(1e-3, 1e3)


def test_huber_loss_branches():
    assert huber_loss(0.5, 1.0) == pytest.approx(0.125)
    assert huber_loss(3.0, 1.0) == pytest.approx(2.5)
    for tau in (0.3, 1.0, 7.0):
        assert huber_loss(tau, tau) == pytest.approx(0.5 * tau**2)
        assert huber_loss(-tau, tau) == pytest.approx(0.5 * tau**2)


def test_huber_loss_infinite_tau_is_squared():
    u = np.linspace(-50, 50, 11)
    np.testing.assert_array_equal(huber_loss(u, np.inf), 0.5 * u * u)


def test_huber_psi_examples():
    assert huber_psi(3.0, 2.0) == 2.0
    assert huber_psi(-1.0, 2.0) == -1.0
    assert huber_psi(0.0, 0.7) == 0.0


@pytest.mark.parametrize("tau", [0.0, -1.0])
def test_nonpositive_tau_rejected(tau):
    with pytest.raises(InvalidArgumentError):
        huber_loss(1.0, tau)
    with pytest.raises(InvalidArgumentError):
        huber_psi(1.0, tau)


@given(finite, positive)
def test_loss_below_half_square(u, tau):
    val = huber_loss(u, tau)
    assert val <= 0.5 * u * u + 1e-9 * max(1.0, u * u)
    if abs(u) <= tau:
        assert val == pytest.approx(0.5 * u * u)


@given(finite, finite, positive)
def test_psi_lipschitz_odd_bounded(a, b, tau):
    assert abs(huber_psi(a, tau) - huber_psi(b, tau)) <= abs(a - b) + 1e-12
    assert huber_psi(-a, tau) == -huber_psi(a, tau)
    assert abs(huber_psi(a, tau)) <= tau


def test_shard_validation():
    X = np.column_stack([np.ones(3), np.arange(3.0)])
    with pytest.raises(InvalidArgumentError):
        Shard(0, np.zeros(3), X[:, ::-1])
    with pytest.raises(InvalidArgumentError):
        Shard(0, np.array([0.0, np.nan, 1.0]), X)
    with pytest.raises(InvalidArgumentError):
        Shard(0, np.zeros(2), X)
    sh = Shard(0, np.zeros(3), X)
    assert (sh.n, sh.p) == (3, 2)
    with pytest.raises(ValueError):
        sh.y[0] = 1.0


def test_robust_config_invariants():
    RobustConfig(1.0, 2.0, 1.0)
    with pytest.raises(InvalidArgumentError):
        RobustConfig(2.0, 1.0)
    with pytest.raises(InvalidArgumentError):
        RobustConfig(1.0, 1.0, 0.0)


def test_noiseless_shard_loss_and_gradient_vanish(rng):
    sh = random_shard(rng, 30, 4, noise=0.0, beta=np.arange(4.0))
    assert shard_loss(sh, np.arange(4.0), 0.5) == 0.0
    np.testing.assert_allclose(shard_gradient(sh, np.arange(4.0), 0.5), 0.0, atol=1e-13)


def test_single_row():
    sh = Shard(0, np.array([1.0]), np.array([[1.0, 0.0, 0.0]]))
    assert shard_loss(sh, np.zeros(3), 10.0) == pytest.approx(0.5)
    np.testing.assert_array_equal(shard_gradient(sh, np.zeros(3), 10.0), [-1.0, 0.0, 0.0])


def test_shard_loss_matches_per_row_sum(rng):
    sh = random_shard(rng, 5, 2, noise=3.0)
    beta, tau = np.array([0.3, -0.2]), 0.8
    total = 0.0
    for i in range(sh.n):
        u = sh.y[i] - (sh.X[i, 0] * beta[0] + sh.X[i, 1] * beta[1])
        total += 0.5 * u * u if abs(u) <= tau else tau * abs(u) - 0.5 * tau * tau
    assert shard_loss(sh, beta, tau) == pytest.approx(total / sh.n, abs=1e-12)


def test_gradient_matches_finite_differences(rng):
    sh = random_shard(rng, 20, 4, noise=2.0)
    tau = 1.0
    for _ in range(20):
        beta = rng.standard_normal(4)
        r = sh.residuals(beta)
        if np.min(np.abs(np.abs(r) - tau)) > 1e-3:
            break
    h = 1e-6
    fd = np.array([(shard_loss(sh, beta + h * e, tau) - shard_loss(sh, beta - h * e, tau)) / (2 * h)
                   for e in np.eye(4)])
    g = shard_gradient(sh, beta, tau)
    assert np.max(np.abs(fd - g)) / np.max(np.abs(g)) <= 1e-5


def test_large_tau_is_least_squares(rng):
    sh = random_shard(rng, 25, 3)
    beta = np.zeros(3)
    tau = 10 * np.max(np.abs(sh.residuals(beta)))
    r = sh.residuals(beta)
    value, grad = shard_loss_and_gradient(sh, beta, tau)
    assert value == pytest.approx(0.5 * np.mean(r * r), rel=1e-15)
    np.testing.assert_allclose(grad, -sh.X.T @ r / sh.n, rtol=1e-14)


def test_dimension_mismatch(rng):
    sh = random_shard(rng, 5, 3)
    with pytest.raises(InvalidArgumentError):
        shard_loss(sh, np.zeros(2), 1.0)
    with pytest.raises(InvalidArgumentError):
        shard_gradient(sh, np.zeros(4), 1.0)
