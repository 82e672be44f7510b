"""Inner optimizers: Barzilai-Borwein gradient descent, LAMM for l1 penalties, OLS."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import linalg

from .model_core import InvalidArgumentError, NumericFailure, SingularDesignError, Shard


@dataclass
class SmoothProblem:
    """A smooth objective given by ``value_and_grad(beta) -> (value, gradient)``.

    ``value`` may be supplied separately when a value-only evaluation is
    cheaper; otherwise it falls back to ``value_and_grad``.
    """

    value_and_grad: Callable
    p: int
    value: Callable | None = None

    def __post_init__(self):
        if self.value is None:
            self.value = lambda beta: self.value_and_grad(beta)[0]


@dataclass
class SolverReport:
    beta_hat: np.ndarray
    iterations: int
    converged: bool
    final_grad_infnorm: float | None = None
    final_step_norm: float | None = None
    final_phi: float | None = None
    steps: list = field(default_factory=list, repr=False)
    objective: list = field(default_factory=list, repr=False)


def bb_stepsize(s, g_diff, variant: str = "bb1"):
    """Barzilai-Borwein step; ``None`` when the curvature estimate is not positive."""
    s = np.asarray(s, dtype=float)
    g_diff = np.asarray(g_diff, dtype=float)
    sy = float(s @ g_diff)
    if variant == "bb1":
        num, den = float(s @ s), sy
    elif variant == "bb2":
        num, den = sy, float(g_diff @ g_diff)
    else:
        raise InvalidArgumentError(f"unknown BB variant {variant!r}")
    if not (den > 0 and num > 0) or not np.isfinite(num / den):
        return None
    return num / den


def _require_finite(beta, value, grad, last, what):
    if not (np.isfinite(value) and np.all(np.isfinite(grad))):
        raise NumericFailure(f"{what}: non-finite loss or gradient", last_iterate=last)


def gd_bb_minimize(problem: SmoothProblem, beta0, grad_tol: float = 1e-4, step_cap: float = 10.0,
                   max_iter: int = 1000, variant: str = "bb1") -> SolverReport:
    """Gradient descent with capped Barzilai-Borwein steps.

    The first step has unit length; later steps use ``min(eta_k, step_cap)``
    and fall back to 1 when the BB denominator is not positive. Stops once
    the sup-norm of the gradient drops to ``grad_tol``.
    """
    beta = np.array(beta0, dtype=float)
    if beta.shape != (problem.p,) or not np.all(np.isfinite(beta)):
        raise InvalidArgumentError("beta0 must be a finite vector of length p")
    value, grad = problem.value_and_grad(beta)
    _require_finite(beta, value, grad, beta, "gd_bb")
    steps = []
    gnorm = float(np.max(np.abs(grad)))
    k = 0
    step = min(1.0, step_cap)
    while gnorm > grad_tol and k < max_iter:
        new = beta - step * grad
        steps.append(step)
        new_value, new_grad = problem.value_and_grad(new)
        _require_finite(new, new_value, new_grad, beta, "gd_bb")
        k += 1
        eta = bb_stepsize(new - beta, new_grad - grad, variant)
        step = 1.0 if eta is None else min(eta, step_cap)
        beta, grad = new, new_grad
        gnorm = float(np.max(np.abs(grad)))
    return SolverReport(beta, k, gnorm <= grad_tol, final_grad_infnorm=gnorm, steps=steps)


def soft_threshold(u, lam):
    """``sign(u) * max(|u| - lam, 0)``, elementwise."""
    if np.any(np.asarray(lam) < 0):
        raise InvalidArgumentError("threshold must be nonnegative")
    u = np.asarray(u, dtype=float)
    out = np.sign(u) * np.maximum(np.abs(u) - lam, 0.0)
    return out if out.ndim else float(out)


def penalty_weights(p: int, unpenalized: Sequence[int] = (0,)) -> np.ndarray:
    w = np.ones(p)
    w[list(unpenalized)] = 0.0
    return w


def lamm_minimize(problem: SmoothProblem, lam: float, beta0, phi0: float = 1e-4, inflate: float = 1.1,
                  step_tol: float = 1e-5, max_iter: int = 5000, unpenalized: Sequence[int] = (0,),
                  phi_ceiling: float = 1e12, record: bool = False, phi_start: float | None = None) -> SolverReport:
    """Minimize ``f(beta) + lam * sum_{j not unpenalized} |beta_j|`` by LAMM.

    Each iteration starts the isotropic curvature at ``max(phi0, phi_prev / inflate)``
    and inflates it until the quadratic surrogate majorizes ``f`` at the
    proposed point, which guarantees descent of the penalized objective.
    ``phi_start`` (typically the ``final_phi`` of a related solve) warm-starts
    the curvature at ``max(phi0, inflate * phi_start)``.
    """
    if lam < 0:
        raise InvalidArgumentError("lam must be nonnegative")
    beta = np.array(beta0, dtype=float)
    if beta.shape != (problem.p,) or not np.all(np.isfinite(beta)):
        raise InvalidArgumentError("beta0 must be a finite vector of length p")
    w = penalty_weights(problem.p, unpenalized)
    value, grad = problem.value_and_grad(beta)
    _require_finite(beta, value, grad, beta, "lamm")
    objective = [value + lam * float(w @ np.abs(beta))] if record else []
    phi = phi0 if phi_start is None else max(phi0, inflate * phi_start)
    step_norm = np.inf
    k = 0
    while k < max_iter:
        phi = max(phi0, phi / inflate)
        while True:
            new = soft_threshold(beta - grad / phi, lam * w / phi)
            d = new - beta
            new_value = problem.value(new)
            if not np.isfinite(new_value):
                raise NumericFailure("lamm: non-finite loss", last_iterate=beta)
            surrogate = value + float(grad @ d) + 0.5 * phi * float(d @ d)
            if surrogate >= new_value:
                break
            phi *= inflate
            if phi > phi_ceiling:
                raise NumericFailure("lamm: isotropic parameter exceeded its ceiling", last_iterate=beta)
        k += 1
        step_norm = float(np.sqrt(d @ d))
        value, grad = problem.value_and_grad(new)
        _require_finite(new, value, grad, beta, "lamm")
        beta = new
        if record:
            objective.append(value + lam * float(w @ np.abs(beta)))
        if step_norm <= step_tol:
            break
    return SolverReport(beta, k, step_norm <= step_tol, final_step_norm=step_norm, final_phi=phi,
                        objective=objective)


def _as_design(data):
    if isinstance(data, Shard):
        return data.y, data.X
    if isinstance(data, (list, tuple)) and data and isinstance(data[0], Shard):
        return np.concatenate([s.y for s in data]), np.vstack([s.X for s in data])
    y, X = data
    return np.asarray(y, dtype=float), np.asarray(X, dtype=float)


def ols_solve(data, ridge_eps: float = 0.0, rcond: float = 1e-12) -> np.ndarray:
    """Least squares via QR, optionally with a small ridge ``ridge_eps * ||beta||^2``.

    ``data`` is a shard, a list of shards, or a ``(y, X)`` pair.
    """
    y, X = _as_design(data)
    n, p = X.shape
    if ridge_eps < 0:
        raise InvalidArgumentError("ridge_eps must be nonnegative")
    if ridge_eps > 0:
        X = np.vstack([X, np.sqrt(n * ridge_eps) * np.eye(p)])
        y = np.concatenate([y, np.zeros(p)])
    elif n < p:
        raise SingularDesignError(f"n={n} < p={p} without ridge")
    Q, R = np.linalg.qr(X)
    diag = np.abs(np.diag(R))
    if diag.min() <= rcond * diag.max():
        raise SingularDesignError("design matrix is rank deficient")
    return linalg.solve_triangular(R, Q.T @ y)
