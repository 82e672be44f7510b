"""Low-dimensional estimators: centralized, divide-and-conquer and multi-round distributed.

The distributed procedures alternate between one gradient gather over all
shards (with the global parameter ``tau``) and a local solve on the central
shard of the loss

    L_{1,kappa}(beta) - <grad L_{1,kappa}(anchor) - mean_j grad L_{j,tau}(anchor), beta>

whose gradient at the anchor equals the global gradient.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .model_core import (
    DegenerateInputError,
    InvalidArgumentError,
    NumericFailure,
    Shard,
    check_beta,
    huber_loss,
    huber_psi,
    shard_gradient,
)
from .runtime import CommLedger, check_shards, gather_gradients
from .solvers import SmoothProblem, gd_bb_minimize, ols_solve
from .synth import pool

EARLY_STOP_FLOOR = 1e-5


class HuberObjective:
    """Mean Huber loss on ``(y, X)`` minus a linear term ``<shift, beta>``.

    Keeps the residual of the last value-only call so that an immediately
    following gradient request at the same point skips one product with ``X``.
    """

    def __init__(self, y, X, tau, shift=None):
        self.y, self.X, self.tau = y, X, tau
        self.n, self.p = X.shape
        self.shift = np.zeros(self.p) if shift is None else np.asarray(shift, dtype=float)
        self._cache = (None, None)

    def _residual(self, beta):
        last, r = self._cache
        if last is beta:
            return r
        r = self.y - self.X @ beta
        self._cache = (beta, r)
        return r

    def value(self, beta):
        r = self._residual(beta)
        return float(np.mean(huber_loss(r, self.tau))) - float(self.shift @ beta)

    def value_and_grad(self, beta):
        r = self._residual(beta)
        value = float(np.mean(huber_loss(r, self.tau))) - float(self.shift @ beta)
        grad = -(self.X.T @ huber_psi(r, self.tau)) / self.n - self.shift
        return value, grad

    def problem(self) -> SmoothProblem:
        return SmoothProblem(self.value_and_grad, self.p, self.value)


@dataclass(frozen=True)
class ShiftedLossSpec:
    central_shard: Shard
    kappa: float
    anchor: np.ndarray
    shift: np.ndarray

    @classmethod
    def build(cls, central: Shard, kappa, anchor, global_gradient):
        shift = shard_gradient(central, anchor, kappa) - global_gradient
        return cls(central, kappa, np.asarray(anchor, dtype=float), shift)

    def objective(self) -> HuberObjective:
        return HuberObjective(self.central_shard.y, self.central_shard.X, self.kappa, self.shift)


@dataclass
class RoundRecord:
    g: float
    beta: np.ndarray
    inner_iters: int


@dataclass
class FitTrace:
    rounds: list = field(default_factory=list)
    ledger: CommLedger = field(default_factory=CommLedger)
    stop_reason: str = "max_rounds"
    final_phi: float | None = None

    @property
    def g(self) -> list:
        return [r.g for r in self.rounds]

    @property
    def n_rounds(self) -> int:
        return len(self.rounds)


def tune_kappa(residuals, p: int) -> float:
    """Self-tuned robustification parameter from pilot residuals.

    Solves ``sum_i min(r_i^2, k^2) / k^2 / (n - p) = (p + log n) / n`` for ``k``
    by bisection. Falls back to ``max |r_i|`` when the equation has no root.
    """
    r = np.asarray(residuals, dtype=float)
    n = r.shape[0]
    if n <= p:
        raise InvalidArgumentError(f"self-tuning needs n > p (n={n}, p={p})")
    return _solve_tuning_equation(r, n - p, (p + math.log(n)) / n)


def _solve_tuning_equation(r, dof, target):
    a = np.abs(r)
    r2 = a * a
    if not np.any(a > 0):
        raise DegenerateInputError("all residuals are zero")
    nonzero = int(np.count_nonzero(a))
    if target >= 1 or nonzero / dof <= target:
        return float(a.max())

    def f(k):
        return float(np.sum(np.minimum(r2, k * k))) / (k * k) / dof - target

    # f(hi) <= 0 because min(r^2, k^2) <= r^2; f(lo) > 0 because every nonzero residual is clipped
    hi = math.sqrt(float(np.sum(r2)) / (dof * target))
    lo = 0.5 * float(a[a > 0].min())
    if f(hi) >= 0:
        return hi
    return float(optimize.bisect(f, lo, hi, xtol=1e-14 * hi, rtol=1e-15, maxiter=500))


def tune_tau_global(kappa: float, m: int, c_mult: float = 1.0) -> float:
    return c_mult * math.sqrt(m) * kappa


def _as_shard(data) -> Shard:
    if isinstance(data, Shard):
        return data
    if isinstance(data, (list, tuple)):
        return data[0] if len(data) == 1 else pool(data)
    y, X = data
    return Shard(0, y, X)


def huber_fit(shard: Shard, tau, beta0, grad_tol: float = 1e-4, max_iter: int = 1000):
    problem = HuberObjective(shard.y, shard.X, tau).problem()
    return gd_bb_minimize(problem, beta0, grad_tol=grad_tol, max_iter=max_iter)


def self_tuned_ahr(shard: Shard, beta0=None, grad_tol: float = 1e-4):
    """Adaptive Huber fit with tau from the self-tuning equation; returns ``(beta, tau)``.

    The pilot residuals come from OLS; tau is re-tuned once on the residuals
    of the first Huber fit before the final refit.
    """
    if beta0 is None:
        beta0 = ols_solve(shard)
    tau = tune_kappa(shard.residuals(beta0), shard.p)
    beta = huber_fit(shard, tau, beta0, grad_tol).beta_hat
    tau = tune_kappa(shard.residuals(beta), shard.p)
    beta = huber_fit(shard, tau, beta, grad_tol).beta_hat
    return beta, tau


def centralized_ahr(data, tau="auto", beta0="auto", grad_tol: float = 1e-4) -> np.ndarray:
    """Huber regression on the pooled data (all shards concatenated)."""
    shard = _as_shard(data)
    start = ols_solve(shard) if isinstance(beta0, str) else check_beta(beta0, shard.p)
    if isinstance(tau, str):
        return self_tuned_ahr(shard, start, grad_tol)[0]
    return huber_fit(shard, tau, start, grad_tol).beta_hat


def dc_average(local_fits) -> np.ndarray:
    fits = [np.asarray(b, dtype=float) for b in local_fits]
    if not fits:
        raise InvalidArgumentError("nothing to average")
    if any(b.shape != fits[0].shape for b in fits):
        raise InvalidArgumentError("local fits have different dimensions")
    total = np.zeros_like(fits[0])
    for b in fits:
        total += b
    return total / len(fits)


def dc_ahr(shards) -> np.ndarray:
    return dc_average([self_tuned_ahr(sh)[0] for sh in shards])


def dc_ols(shards) -> np.ndarray:
    return dc_average([ols_solve(sh) for sh in shards])


def distributed_ahr(shards, kappa, tau, beta0, T_max: int = 50, ledger: CommLedger | None = None,
                    grad_tol: float = 1e-4, max_inner: int = 1000):
    """Multi-round distributed adaptive Huber regression with early stopping.

    Round ``t`` gathers the global ``tau``-gradient at the current iterate and
    records its sup-norm ``g_t``. The loop stops, returning the current
    iterate, once ``g_t >= g_{t-1}`` (with ``g_0 = 1``) or ``g_t <= 1e-5``;
    otherwise the central shard solves the shifted ``kappa``-Huber problem
    warm-started at the current iterate.
    """
    check_shards(shards)
    if not (kappa > 0 and tau >= kappa):
        raise InvalidArgumentError(f"need tau >= kappa > 0, got kappa={kappa}, tau={tau}")
    central = shards[0]
    beta = check_beta(beta0, central.p).copy()
    if not np.all(np.isfinite(beta)):
        raise InvalidArgumentError("beta0 must be finite")
    ledger = CommLedger() if ledger is None else ledger
    trace = FitTrace(ledger=ledger)
    g_prev = 1.0
    for _ in range(T_max):
        global_grad = gather_gradients(shards, beta, tau, ledger).mean_gradient
        g = float(np.max(np.abs(global_grad)))
        if g >= g_prev or g <= EARLY_STOP_FLOOR:
            trace.rounds.append(RoundRecord(g, beta, 0))
            trace.stop_reason = "floor" if g <= EARLY_STOP_FLOOR else "no_progress"
            break
        spec = ShiftedLossSpec.build(central, kappa, beta, global_grad)
        try:
            report = gd_bb_minimize(spec.objective().problem(), beta, grad_tol=grad_tol, max_iter=max_inner)
        except NumericFailure as exc:
            exc.trace = trace
            raise
        beta = report.beta_hat
        trace.rounds.append(RoundRecord(g, beta, report.iterations))
        g_prev = g
    trace.ledger = ledger
    return beta, trace


def distributed_ols(shards, beta0, T_max: int = 50, ledger: CommLedger | None = None, grad_tol: float = 1e-4):
    """The distributed loop of :func:`distributed_ahr` with the squared loss."""
    return distributed_ahr(shards, math.inf, math.inf, beta0, T_max, ledger, grad_tol)


def validation_loss(beta, validation: Shard) -> float:
    r = validation.residuals(beta)
    return float(np.mean(r * r))


@dataclass
class TunedFit:
    beta: np.ndarray
    trace: FitTrace
    kappa: float
    tau: float
    c_mult: float


def tuned_distributed_ahr(shards, beta0, validation: Shard, c_grid=(1, 2, 3, 4, 5), T_max: int = 50,
                          grad_tol: float = 1e-4) -> TunedFit:
    """Distributed AHR with kappa self-tuned on the central shard and ``tau = c sqrt(m) kappa``.

    ``c`` is picked from ``c_grid`` by squared prediction error on ``validation``.
    """
    _, kappa = self_tuned_ahr(shards[0], grad_tol=grad_tol)
    m = len(shards)
    best = None
    for c in c_grid:
        tau = tune_tau_global(kappa, m, c)
        beta, trace = distributed_ahr(shards, kappa, tau, beta0, T_max, grad_tol=grad_tol)
        loss = validation_loss(beta, validation)
        if best is None or loss < best[0]:
            best = (loss, TunedFit(beta, trace, kappa, tau, float(c)))
    return best[1]
