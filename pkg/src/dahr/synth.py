"""Heteroscedastic simulation designs with heavy-tailed, possibly skewed errors.

Responses follow ``y = x^T b + (x^T b)^2 * eps / c`` with ``c = sqrt(3) * ||b||^2``,
standard-normal covariates and a leading intercept column.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.random import Generator, Philox, SeedSequence
from scipy import special

from .model_core import InvalidArgumentError, Shard, check_beta

DISTRIBUTIONS = ("normal", "t2", "pareto", "burr")
REGIMES = ("lowdim", "highdim")

# stream-key namespaces inside one seed
_TRAIN, _VALID = 0, 1


@dataclass(frozen=True)
class ErrorDist:
    """Error distribution; skewed ones are centered at their mean.

    ``pareto`` uses ``scale``/``shape``; ``burr`` is Burr XII (Singh-Maddala)
    with CDF ``1 - (1 + (x/scale)**c)**(-k)``.
    """

    tag: str
    scale: float = 1.0
    shape: float = 1.0
    c: float = 1.0
    k: float = 1.0

    def __post_init__(self):
        if self.tag not in DISTRIBUTIONS:
            raise InvalidArgumentError(f"unknown error distribution {self.tag!r}")

    @classmethod
    def from_tag(cls, tag: str) -> "ErrorDist":
        if tag == "pareto":
            return cls("pareto", scale=4.0, shape=2.0)
        if tag == "burr":
            return cls("burr", scale=1.0, c=1.0, k=2.0)
        return cls(tag)

    @property
    def mean(self) -> float:
        """Mean of the raw (uncentered) draw."""
        if self.tag == "pareto":
            if self.shape <= 1:
                raise InvalidArgumentError("Pareto mean is infinite for shape <= 1")
            return self.shape * self.scale / (self.shape - 1.0)
        if self.tag == "burr":
            if self.c * self.k <= 1:
                raise InvalidArgumentError("Burr mean is infinite for c*k <= 1")
            return self.scale * self.k * special.beta(self.k - 1.0 / self.c, 1.0 + 1.0 / self.c)
        return 0.0


def sample_error(dist: ErrorDist | str, rng: Generator, size=None):
    """Centered draws from ``dist``; inverse-CDF sampling for Pareto and Burr."""
    if isinstance(dist, str):
        dist = ErrorDist.from_tag(dist)
    if dist.tag == "normal":
        return rng.standard_normal(size)
    if dist.tag == "t2":
        z = rng.standard_normal(size)
        chi2 = rng.chisquare(2.0, size)
        return z / np.sqrt(chi2 / 2.0)
    u = rng.random(size)
    if dist.tag == "pareto":
        # 1 - U keeps the base strictly positive
        raw = dist.scale * (1.0 - u) ** (-1.0 / dist.shape)
    else:
        raw = dist.scale * ((1.0 - u) ** (-1.0 / dist.k) - 1.0) ** (1.0 / dist.c)
    return raw - dist.mean


def default_beta(p: int, regime: str = "lowdim", s: int | None = None) -> np.ndarray:
    if regime == "lowdim":
        return np.full(p, 1.5)
    if regime == "highdim":
        s = 5 if s is None else s
        beta = np.zeros(p)
        beta[:s] = 1.5
        return beta
    raise InvalidArgumentError(f"unknown regime {regime!r}")


def noise_scale_constant(beta_star) -> float:
    return math.sqrt(3.0) * float(np.dot(beta_star, beta_star))


@dataclass(frozen=True)
class GenConfig:
    n: int
    p: int
    m: int
    dist: str = "normal"
    regime: str = "lowdim"
    s: int | None = None
    seed: int = 0
    error: ErrorDist = field(default=None, compare=False)

    def __post_init__(self):
        if min(self.n, self.p, self.m) < 1:
            raise InvalidArgumentError("n, p, m must be >= 1")
        if self.regime not in REGIMES:
            raise InvalidArgumentError(f"unknown regime {self.regime!r}")
        if self.regime == "highdim":
            s = 5 if self.s is None else self.s
            if not 1 <= s <= self.p - 1:
                raise InvalidArgumentError("highdim sparsity must satisfy 1 <= s <= p - 1")
        if self.error is None:
            object.__setattr__(self, "error", ErrorDist.from_tag(self.dist))
        elif self.error.tag != self.dist:
            raise InvalidArgumentError("error distribution tag disagrees with dist")
        if not 0 <= self.seed < 2**64:
            raise InvalidArgumentError("seed must be an unsigned 64-bit integer")

    @property
    def N(self) -> int:
        return self.n * self.m


def stream(seed: int, *key: int) -> Generator:
    """Independent reproducible generator for ``(seed, key...)``."""
    return Generator(Philox(SeedSequence(seed, spawn_key=key)))


def simulate_rows(n_rows: int, beta_star, error: ErrorDist, rng: Generator, noise_scale: float = 1.0):
    p = beta_star.shape[0]
    X = np.empty((n_rows, p))
    X[:, 0] = 1.0
    X[:, 1:] = rng.standard_normal((n_rows, p - 1))
    mean = X @ beta_star
    eps = sample_error(error, rng, n_rows)
    y = mean + noise_scale * (mean * mean / noise_scale_constant(beta_star)) * eps
    return y, X


def generate(config: GenConfig, beta_star=None, *, noise_scale: float = 1.0) -> list[Shard]:
    """Simulate ``m`` shards of ``n`` rows each, shard ``j`` from stream ``(seed, 0, j)``.

    ``noise_scale=0`` yields noiseless responses ``y = X beta_star``.
    """
    if beta_star is None:
        beta_star = default_beta(config.p, config.regime, config.s)
    beta_star = check_beta(beta_star, config.p)
    shards = []
    for j in range(config.m):
        y, X = simulate_rows(config.n, beta_star, config.error, stream(config.seed, _TRAIN, j), noise_scale)
        shards.append(Shard(j, y, X))
    return shards


def generate_validation(config: GenConfig, n_rows: int, beta_star=None) -> Shard:
    """A fresh held-out sample, independent of every training shard."""
    if beta_star is None:
        beta_star = default_beta(config.p, config.regime, config.s)
    beta_star = check_beta(beta_star, config.p)
    y, X = simulate_rows(n_rows, beta_star, config.error, stream(config.seed, _VALID))
    return Shard(-1, y, X)


def pool(shards) -> Shard:
    return Shard(0, np.concatenate([s.y for s in shards]), np.vstack([s.X for s in shards]))


def partition(y, X, m: int) -> list[Shard]:
    """Split rows into ``m`` contiguous equal-size shards."""
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    N = y.shape[0]
    if m < 1 or N % m:
        raise InvalidArgumentError(f"{N} rows cannot be split into {m} equal shards")
    n = N // m
    return [Shard(j, y[j * n:(j + 1) * n], X[j * n:(j + 1) * n]) for j in range(m)]


def write_csv(path, shards) -> None:
    path = Path(path)
    p = shards[0].p
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["y"] + [f"x{j}" for j in range(1, p + 1)])
        for sh in shards:
            for yi, xi in zip(sh.y, sh.X):
                w.writerow([repr(float(yi))] + [repr(float(v)) for v in xi])


def read_csv(path, m: int = 1) -> list[Shard]:
    path = Path(path)
    with path.open(newline="") as fh:
        header = next(csv.reader(fh))
    if not header or header[0] != "y" or header[1:] != [f"x{j}" for j in range(1, len(header))]:
        raise InvalidArgumentError(f"{path}: header must be y,x1,...,xp")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return partition(data[:, 0], data[:, 1:], m)
