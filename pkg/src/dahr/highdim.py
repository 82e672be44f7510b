"""l1-penalized Huber and least-squares fits, centralized, averaged and multi-round distributed.

The intercept (coordinate 0) is never penalized unless ``unpenalized`` says
otherwise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .estimators import (
    FitTrace,
    HuberObjective,
    RoundRecord,
    ShiftedLossSpec,
    _as_shard,
    _solve_tuning_equation,
    dc_average,
    validation_loss,
)
from .model_core import InvalidArgumentError, NumericFailure, Shard
from .runtime import CommLedger, check_shards, gather_gradients
from .solvers import lamm_minimize, penalty_weights

MAD_SCALE = 1.4826


@dataclass(frozen=True)
class PenaltyConfig:
    lam: float
    unpenalized: tuple = (0,)

    def __post_init__(self):
        if self.lam < 0:
            raise InvalidArgumentError("lambda must be nonnegative")


@dataclass(frozen=True)
class LambdaSchedule:
    """``lam_t = sigma * (a sqrt(log p / N) + b * rho^(t/2) * sqrt(log p / n))``.

    ``rho = min(s^2 log p / n, 1)`` so the sequence never increases; it
    settles at ``sigma * a * sqrt(log p / N)``.
    """

    a: float
    b: float
    sigma: float
    s: int
    p: int
    n: int
    N: int

    def __post_init__(self):
        if self.a <= 0 or self.b < 0 or self.sigma <= 0:
            raise InvalidArgumentError("schedule needs a > 0, b >= 0 and sigma > 0")

    @property
    def lambda_star(self) -> float:
        return self.sigma * self.a * math.sqrt(math.log(self.p) / self.N)

    def __call__(self, t: int) -> float:
        rho = min(self.s * self.s * math.log(self.p) / self.n, 1.0)
        return self.lambda_star + self.sigma * self.b * rho ** (t / 2) * math.sqrt(math.log(self.p) / self.n)


def robust_scale(residuals) -> float:
    """Normal-consistent median absolute deviation."""
    r = np.asarray(residuals, dtype=float)
    return MAD_SCALE * float(np.median(np.abs(r - np.median(r))))


def tune_tau_sparse(residuals, support_size: int, p: int) -> float:
    """Self-tuning with the sparse target ``log(p) / n`` and ``n - support_size`` residual degrees of freedom."""
    r = np.asarray(residuals, dtype=float)
    n = r.shape[0]
    dof = n - support_size
    if dof <= 0:
        raise InvalidArgumentError("pilot support is as large as the sample")
    return _solve_tuning_equation(r, dof, math.log(p) / n)


def _start(beta0, p):
    return np.zeros(p) if beta0 is None else np.asarray(beta0, dtype=float)


def l1_ahr_solve(data, tau, lam, beta0=None, unpenalized=(0,), step_tol: float = 1e-5, max_iter: int = 5000,
                 phi_start=None):
    """Like :func:`l1_ahr_fit` but returns the full solver report."""
    if not tau > 0:
        raise InvalidArgumentError("tau must be positive")
    shard = _as_shard(data)
    problem = HuberObjective(shard.y, shard.X, tau).problem()
    return lamm_minimize(problem, lam, _start(beta0, shard.p), step_tol=step_tol, max_iter=max_iter,
                         unpenalized=unpenalized, phi_start=phi_start)


def l1_ahr_fit(data, tau, lam, beta0=None, unpenalized=(0,), step_tol: float = 1e-5, max_iter: int = 5000) -> np.ndarray:
    """Huber loss plus ``lam`` times the l1 norm of the penalized coordinates."""
    return l1_ahr_solve(data, tau, lam, beta0, unpenalized, step_tol, max_iter).beta_hat


def lasso_fit(data, lam, beta0=None, unpenalized=(0,), step_tol: float = 1e-5, max_iter: int = 5000) -> np.ndarray:
    shard = _as_shard(data)
    if lam <= 0 and shard.p > shard.n:
        raise InvalidArgumentError("lasso with p > n needs lam > 0")
    return l1_ahr_fit(shard, math.inf, lam, beta0, unpenalized, step_tol, max_iter)


def lambda_max(data, tau, unpenalized=(0,)) -> float:
    """Smallest penalty at which the fit with only the unpenalized coordinates is optimal."""
    shard = _as_shard(data)
    beta = np.zeros(shard.p)
    w = penalty_weights(shard.p, unpenalized)
    free = w == 0
    if np.any(free):
        sub = HuberObjective(shard.y, shard.X[:, free], tau).problem()
        beta[free] = lamm_minimize(sub, 0.0, np.zeros(int(free.sum())), unpenalized=()).beta_hat
    _, grad = HuberObjective(shard.y, shard.X, tau).value_and_grad(beta)
    return float(np.max(np.abs(grad[~free]))) if np.any(~free) else 0.0


def lambda_grid(lam_max: float, size: int = 12, ratio: float = 0.01) -> np.ndarray:
    return lam_max * np.geomspace(1.0, ratio, size)


def validated_path(fit, grid, validation: Shard, beta0, patience: int = 3):
    """Warm-started fits along a decreasing ``grid``, scored by squared prediction error on ``validation``.

    ``fit(lam, beta_start, phi_start)`` returns ``(beta, phi)``. The path stops
    early once the validation loss has failed to improve ``patience`` times
    in a row. Returns ``(beta, lam)`` of the best fit.
    """
    best = None
    beta, phi = beta0, None
    worse = 0
    for lam in grid:
        beta, phi = fit(lam, beta, phi)
        loss = validation_loss(beta, validation)
        if best is None or loss < best[0]:
            best = (loss, beta, float(lam))
            worse = 0
        else:
            worse += 1
            if worse >= patience:
                break
    return best[1], best[2]


def dist_reg_ahr(shards, kappa, tau, schedule, T: int, beta0, ledger: CommLedger | None = None,
                 unpenalized=(0,), step_tol: float = 1e-5, max_iter: int = 5000, phi_start=None):
    """``T`` rounds of gradient gathering followed by a penalized shifted-Huber solve on the central shard.

    ``schedule`` maps the round index ``t`` to ``lam_t``; a plain number means a constant penalty.
    """
    _, p = check_shards(shards)
    if not (kappa > 0 and tau >= kappa):
        raise InvalidArgumentError(f"need tau >= kappa > 0, got kappa={kappa}, tau={tau}")
    if T < 1:
        raise InvalidArgumentError("T must be at least 1")
    lam_at = schedule if callable(schedule) else (lambda t: float(schedule))
    central = shards[0]
    beta = np.array(beta0, dtype=float)
    ledger = CommLedger() if ledger is None else ledger
    trace = FitTrace(ledger=ledger, stop_reason="fixed_rounds")
    for t in range(1, T + 1):
        global_grad = gather_gradients(shards, beta, tau, ledger).mean_gradient
        g = float(np.max(np.abs(global_grad)))
        spec = ShiftedLossSpec.build(central, kappa, beta, global_grad)
        try:
            report = lamm_minimize(spec.objective().problem(), lam_at(t), beta, step_tol=step_tol,
                                   max_iter=max_iter, unpenalized=unpenalized, phi_start=phi_start)
        except NumericFailure as exc:
            exc.trace = trace
            raise
        beta, phi_start = report.beta_hat, report.final_phi
        trace.rounds.append(RoundRecord(g, beta, report.iterations))
    trace.final_phi = phi_start
    return beta, trace


def dc_l1_ahr(shards, kappa, lam, beta0=None, unpenalized=(0,)) -> np.ndarray:
    check_shards(shards)
    return dc_average([l1_ahr_fit(sh, kappa, lam, beta0, unpenalized) for sh in shards])


@dataclass
class HighdimFit:
    beta: np.ndarray
    rounds: int
    comm_values: int
    lam: float | None = None
    tau: float | None = None


def default_rounds(m: int) -> int:
    return max(1, int(math.floor(math.log(m))))


def _path_fit(data, tau):
    def fit(lam, beta, phi):
        r = l1_ahr_solve(data, tau, lam, beta, phi_start=phi)
        return r.beta_hat, r.final_phi
    return fit


def _support(beta) -> int:
    return int(np.count_nonzero(beta[1:])) + 1


def highdim_fits(shards, validation: Shard, methods, s: int, a_grid=(0.25, 0.5, 1, 2, 4, 8), b_grid=(0, 0.5, 1, 2),
                 c_grid=(1,), T: int | None = None, path_size: int = 15) -> dict:
    """Fit every requested penalized method on one simulated dataset.

    Penalty levels (and the schedule constants of ``dist_reg_ahr``) are chosen
    by prediction error on ``validation``. Returns ``{method: HighdimFit}``;
    a method that raised maps to its exception instead.
    """
    n, p = check_shards(shards)
    m = len(shards)
    T = default_rounds(m) if T is None else T
    data_shipping = (m - 1) * n * (p + 1)
    out = {}
    want = set(methods)

    if want & {"lasso", "l1_ahr"}:
        pooled = _as_shard(shards)
        try:
            grid = lambda_grid(lambda_max(pooled, math.inf), path_size, 0.02)
            beta_lasso, lam = validated_path(_path_fit(pooled, math.inf), grid, validation, np.zeros(p))
            out["lasso"] = HighdimFit(beta_lasso, 0, data_shipping, lam, math.inf)
        except Exception as exc:  # recorded per method by the caller
            out["lasso"] = exc
        if "l1_ahr" in want:
            try:
                if isinstance(out["lasso"], Exception):
                    raise out["lasso"]
                tau = tune_tau_sparse(pooled.residuals(beta_lasso), _support(beta_lasso), p)
                grid = lambda_grid(lambda_max(pooled, tau), path_size, 0.02)
                beta, lam = validated_path(_path_fit(pooled, tau), grid, validation, np.zeros(p))
                out["l1_ahr"] = HighdimFit(beta, 0, data_shipping, lam, tau)
            except Exception as exc:
                out["l1_ahr"] = exc

    if want & {"dc_l1_ahr", "dist_reg_ahr"}:
        central = shards[0]
        try:
            grid = lambda_grid(lambda_max(central, math.inf), path_size, 0.05)
            beta0, _ = validated_path(_path_fit(central, math.inf), grid, validation, np.zeros(p))
            resid = central.residuals(beta0)
            kappa = tune_tau_sparse(resid, _support(beta0), p)
            sigma = robust_scale(resid)
        except Exception as exc:
            for method in want & {"dc_l1_ahr", "dist_reg_ahr"}:
                out[method] = exc
            return out

        if "dc_l1_ahr" in want:
            def dc_fit(lam, beta, phi):
                return dc_l1_ahr(shards, kappa, lam), None
            try:
                grid = lambda_grid(lambda_max(central, kappa), path_size, 0.05)
                beta, lam = validated_path(dc_fit, grid, validation, np.zeros(p))
                out["dc_l1_ahr"] = HighdimFit(beta, 1, (m - 1) * p, lam, kappa)
            except Exception as exc:
                out["dc_l1_ahr"] = exc

        if "dist_reg_ahr" in want:
            try:
                best = None
                for c in c_grid:
                    tau = c * math.sqrt(m) * kappa
                    for a in a_grid:
                        for b in b_grid:
                            schedule = LambdaSchedule(a, b, sigma, s, p, n, n * m)
                            beta, trace = dist_reg_ahr(shards, kappa, tau, schedule, T, beta0)
                            loss = validation_loss(beta, validation)
                            if best is None or loss < best[0]:
                                best = (loss, beta, trace, schedule(T), tau)
                _, beta, trace, lam, tau = best
                out["dist_reg_ahr"] = HighdimFit(beta, trace.n_rounds, trace.ledger.values_sent, lam, tau)
            except Exception as exc:
                out["dist_reg_ahr"] = exc
    return out
