"""Simulated coordinator/worker fabric with communication accounting.

Shard 0 plays the central machine. Every gradient round broadcasts a
p-vector to the m-1 remote shards and gathers one p-vector back from each.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model_core import InvalidArgumentError, check_beta, shard_gradient

BITS_PER_VALUE = 64


@dataclass
class CommLedger:
    rounds: int = 0
    values_sent: int = 0

    def record_round(self, m: int, p: int) -> None:
        self.rounds += 1
        self.values_sent += 2 * (m - 1) * p

    @property
    def bits_sent(self) -> int:
        return self.values_sent * BITS_PER_VALUE

    def snapshot(self) -> "CommLedger":
        return CommLedger(self.rounds, self.values_sent)


@dataclass(frozen=True)
class GatherResult:
    mean_gradient: np.ndarray
    per_shard: tuple | None = None


def check_shards(shards) -> tuple[int, int]:
    """Return ``(n, p)`` shared by all shards; reject heterogeneous layouts."""
    if not shards:
        raise InvalidArgumentError("no shards given")
    n, p = shards[0].n, shards[0].p
    for sh in shards[1:]:
        if sh.p != p:
            raise InvalidArgumentError(f"shard {sh.id} has p={sh.p}, expected {p}")
        if sh.n != n:
            raise InvalidArgumentError(f"shard {sh.id} has n={sh.n}, expected equal shard sizes ({n})")
    return n, p


def gather_gradients(shards, beta, tau, ledger: CommLedger | None = None, keep_per_shard: bool = False) -> GatherResult:
    """Mean of the shard gradients at ``beta``, reduced in ascending shard order."""
    _, p = check_shards(shards)
    beta = check_beta(beta, p)
    if not tau > 0:
        raise InvalidArgumentError("tau must be positive")
    grads = [shard_gradient(sh, beta, tau) for sh in shards]
    total = np.zeros(p)
    for g in grads:
        total += g
    if ledger is not None:
        ledger.record_round(len(shards), p)
    return GatherResult(total / len(shards), tuple(grads) if keep_per_shard else None)
