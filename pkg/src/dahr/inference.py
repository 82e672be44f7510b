"""Distributed variance estimates and normal-based confidence intervals.

Each shard forms its own sandwich ``S_k^{-1} L_k S_k^{-1}`` and only the
diagonals (p values per shard) travel to the coordinator, where they are
averaged in shard order.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .model_core import InvalidArgumentError, SingularDesignError, Shard, huber_psi
from .runtime import check_shards

MAX_CONDITION = 1e12


@dataclass(frozen=True)
class VarianceReport:
    sigma_hat: np.ndarray
    sigma_tilde: np.ndarray
    N: int


@dataclass(frozen=True)
class ConfInterval:
    lo: float
    hi: float
    level: float

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def covers(self, value: float) -> bool:
        return self.lo <= value <= self.hi


def _gram_inverse(X, ridge: float = 0.0):
    n, p = X.shape
    gram = X.T @ X / n
    if ridge:
        gram = gram + ridge * np.eye(p)
    if n < p or np.linalg.cond(gram) > MAX_CONDITION:
        raise SingularDesignError("shard Gram matrix is singular or ill-conditioned")
    return gram, np.linalg.inv(gram)


def shard_sandwich(shard: Shard, beta_hat, tau, ridge: float = 0.0):
    """Return ``(Sigma_k, Lambda_k, diag(Sigma_k^{-1} Lambda_k Sigma_k^{-1}))`` for one shard."""
    psi = huber_psi(shard.residuals(beta_hat), tau)
    X = shard.X
    sigma, sigma_inv = _gram_inverse(X, ridge)
    weighted = X * (psi * psi)[:, None]
    lam = X.T @ weighted / shard.n
    lam = 0.5 * (lam + lam.T)
    sandwich = sigma_inv @ lam @ sigma_inv
    return sigma, lam, np.diag(sandwich).copy()


def averaged_variance(per_shard_rows) -> np.ndarray:
    rows = np.asarray(per_shard_rows, dtype=float)
    if rows.ndim != 2 or rows.shape[0] < 1:
        raise InvalidArgumentError("expected an m x p array of per-shard variances")
    total = np.zeros(rows.shape[1])
    for row in rows:
        total += row
    return total / rows.shape[0]


def homoscedastic_variance(shards, beta_hat, tau, ridge: float = 0.0) -> np.ndarray:
    """``sigma_eps^2 / m * sum_k diag(Sigma_k^{-1})`` with ``sigma_eps^2 = sum psi^2 / (N - p)``."""
    _, p = check_shards(shards)
    N = sum(sh.n for sh in shards)
    if N <= p:
        raise InvalidArgumentError("need N > p")
    psi_sq = 0.0
    diag_sum = np.zeros(p)
    for sh in shards:
        psi = huber_psi(sh.residuals(beta_hat), tau)
        psi_sq += float(psi @ psi)
        diag_sum += np.diag(_gram_inverse(sh.X, ridge)[1])
    return psi_sq / (N - p) * diag_sum / len(shards)


def distributed_variance(shards, beta_hat, tau, ridge: float = 0.0) -> VarianceReport:
    check_shards(shards)
    rows = [shard_sandwich(sh, beta_hat, tau, ridge)[2] for sh in shards]
    N = sum(sh.n for sh in shards)
    return VarianceReport(
        sigma_hat=np.sqrt(averaged_variance(rows)),
        sigma_tilde=np.sqrt(homoscedastic_variance(shards, beta_hat, tau, ridge)),
        N=N,
    )


def normal_quantile(alpha: float) -> float:
    """``z_{alpha/2}``, the upper ``alpha/2`` standard-normal quantile."""
    if not 0 < alpha < 1:
        raise InvalidArgumentError("alpha must lie in (0, 1)")
    return float(stats.norm.isf(alpha / 2.0))


def conf_interval(beta_j: float, sigma_j: float, N: int, alpha: float = 0.05) -> ConfInterval:
    half = normal_quantile(alpha) * sigma_j / np.sqrt(N)
    return ConfInterval(beta_j - half, beta_j + half, 1.0 - alpha)


def conf_intervals(beta_hat, sigma, N: int, alpha: float = 0.05):
    """Vectorized intervals; returns ``(lo, hi)`` arrays."""
    half = normal_quantile(alpha) * np.asarray(sigma) / np.sqrt(N)
    return beta_hat - half, beta_hat + half
