"""Huber loss, its score function, and per-shard loss/gradient evaluation.

The Huber loss is C^1 but not C^2: the score ``psi`` is continuous at
``|u| = tau`` so no tie-breaking is needed there.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class InvalidArgumentError(ValueError):
    """Raised on shape mismatches and violated preconditions."""


class DegenerateInputError(ValueError):
    """Raised when the input carries no usable information (e.g. all-zero residuals)."""


class SingularDesignError(np.linalg.LinAlgError):
    """Raised when a Gram matrix cannot be inverted reliably."""


class NumericFailure(RuntimeError):
    """Raised when an iterative solver produces non-finite values.

    ``last_iterate`` holds the last finite iterate; ``trace`` is attached by
    multi-round drivers so the caller can inspect progress before the failure.
    """

    def __init__(self, message, last_iterate=None, trace=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.trace = trace


@dataclass(frozen=True)
class Shard:
    """A contiguous block of observations stored on one node.

    ``X`` must carry the intercept in its first column.
    """

    id: int
    y: np.ndarray
    X: np.ndarray = field(repr=False)

    def __post_init__(self):
        y = np.ascontiguousarray(self.y, dtype=float)
        X = np.ascontiguousarray(self.X, dtype=float)
        if X.ndim != 2 or y.ndim != 1:
            raise InvalidArgumentError("y must be 1-d and X 2-d")
        if X.shape[0] != y.shape[0] or X.shape[0] < 1 or X.shape[1] < 1:
            raise InvalidArgumentError(f"shape mismatch: y {y.shape}, X {X.shape}")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(X))):
            raise InvalidArgumentError("shard contains non-finite values")
        if not np.all(X[:, 0] == 1.0):
            raise InvalidArgumentError("first design column must be the intercept (all ones)")
        y.flags.writeable = False
        X.flags.writeable = False
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def residuals(self, beta) -> np.ndarray:
        beta = check_beta(beta, self.p)
        return self.y - self.X @ beta


@dataclass(frozen=True)
class RobustConfig:
    kappa: float
    tau: float
    c_mult: float = 1.0

    def __post_init__(self):
        if not (self.kappa > 0 and self.tau >= self.kappa):
            raise InvalidArgumentError(f"need tau >= kappa > 0, got kappa={self.kappa}, tau={self.tau}")
        if not self.c_mult > 0:
            raise InvalidArgumentError("c_mult must be positive")


def check_beta(beta, p: int) -> np.ndarray:
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (p,):
        raise InvalidArgumentError(f"coefficient vector has shape {beta.shape}, expected ({p},)")
    return beta


def _check_tau(tau):
    if not tau > 0:
        raise InvalidArgumentError(f"tau must be positive, got {tau}")


def huber_loss(u, tau):
    """Huber loss: quadratic inside ``[-tau, tau]``, linear outside.

    ``tau = inf`` gives the squared loss ``0.5 * u**2``.
    """
    _check_tau(tau)
    u = np.asarray(u, dtype=float)
    a = np.abs(u)
    if np.isinf(tau):
        out = 0.5 * u * u
    else:
        out = np.where(a <= tau, 0.5 * u * u, tau * a - 0.5 * tau * tau)
    return out if out.ndim else float(out)


def huber_psi(u, tau):
    """Score function ``sign(u) * min(|u|, tau)``."""
    _check_tau(tau)
    out = np.clip(np.asarray(u, dtype=float), -tau, tau)
    return out if out.ndim else float(out)


def shard_loss(shard: Shard, beta, tau) -> float:
    r = shard.residuals(beta)
    return float(np.mean(huber_loss(r, tau)))


def shard_gradient(shard: Shard, beta, tau) -> np.ndarray:
    """Gradient ``-(1/n) sum psi_tau(y_i - x_i^T beta) x_i``."""
    r = shard.residuals(beta)
    return -(shard.X.T @ huber_psi(r, tau)) / shard.n


def shard_loss_and_gradient(shard: Shard, beta, tau):
    r = shard.residuals(beta)
    value = float(np.mean(huber_loss(r, tau)))
    grad = -(shard.X.T @ huber_psi(r, tau)) / shard.n
    return value, grad
