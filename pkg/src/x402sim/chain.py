"""Simulated settlement chain: mempool, interval block production, reorgs.

Two revert mechanisms coexist. The branch injector (inject_reorg) rewrites
concrete traces for end-to-end demos; the analytic Bernoulli model
(sample_revert / revert_probability) drives large sweeps. Blocks appear at
fixed interval ``block_interval_ms``; a broadcast transaction is included
after a sampled delay and confirmations accrue one per block on top.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .sim import EventLoop, Trace


class DuplicateBroadcast(RuntimeError):
    pass


@dataclass(frozen=True)
class InclusionModel:
    """Distribution of the broadcast-to-inclusion delay T_inc.

    Exponential with the given mean, clamped at truncate_ms, so the survival
    function is exp(-x/mean) for 0 <= x < truncate_ms and 0 beyond the clamp.
    """

    kind: str = "exponential"
    mean_ms: float = 2000.0
    truncate_ms: float = 20000.0

    def __post_init__(self) -> None:
        if self.kind != "exponential":
            raise ValueError(f"unknown inclusion model: {self.kind}")
        if self.mean_ms <= 0 or self.truncate_ms <= 0:
            raise ValueError("inclusion model times must be positive")

    def sample(self, rng: np.random.Generator, size: int | None = None):
        draw = rng.exponential(self.mean_ms, size=size)
        return np.minimum(draw, self.truncate_ms) if size is not None else min(draw, self.truncate_ms)

    def survival(self, x: float) -> float:
        """P(T_inc > x) in closed form."""
        if x < 0:
            return 1.0
        if x >= self.truncate_ms:
            return 0.0
        return math.exp(-x / self.mean_ms)


@dataclass(frozen=True)
class ChainParams:
    block_interval_ms: int = 2000
    reorg_prob: float = 0.05
    alpha: float = math.log(10) / 2.5
    inclusion: InclusionModel | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.block_interval_ms <= 0:
            raise ValueError("block interval must be positive")
        if not 0.0 <= self.reorg_prob <= 1.0:
            raise ValueError("reorg probability must lie in [0, 1]")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.inclusion is None:
            object.__setattr__(
                self,
                "inclusion",
                InclusionModel(mean_ms=float(self.block_interval_ms),
                               truncate_ms=10.0 * self.block_interval_ms),
            )


def revert_probability(depth: int, reorg_prob: float) -> float:
    """Chance an at-risk settlement never reaches depth-k finality."""
    if depth < 0:
        raise ValueError("depth must be >= 0")
    if depth == 0:
        return reorg_prob
    return reorg_prob ** depth


def sample_revert(depth: int, params: ChainParams, rng: np.random.Generator, size: int | None = None):
    """Bernoulli revert trial(s) at the given finality depth."""
    p = revert_probability(depth, params.reorg_prob)
    if size is None:
        return bool(rng.random() < p)
    return rng.random(size) < p


def chain_epsilon(depth: int, alpha: float) -> float:
    """Exponential finality-decay bound e^(-alpha * depth)."""
    return math.exp(-alpha * depth)


def min_depth_for_target(alpha: float, epsilon_target: float) -> int:
    """Smallest depth whose finality bound meets the target failure rate.

    ceil(ln(1/eps)/alpha) with a 1e-9 epsilon guard so exact real-arithmetic
    boundaries (e.g. the quotient landing on an integer) do not round up on
    float noise.
    """
    if epsilon_target <= 0 or epsilon_target >= 1:
        raise ValueError("epsilon target must lie in (0, 1)")
    x = math.log(1.0 / epsilon_target) / alpha
    return max(0, math.ceil(x - 1e-9))


@dataclass
class Tx:
    tx_hash: str
    sender: str
    broadcast_at: int
    included_at: int          # logical time the tx leaves the mempool
    inclusion_height: int     # block that carries it (produced at height*T_b)
    pay_id: str | None = None
    meta: dict = field(default_factory=dict)


class Chain:
    """Per-instance chain state driven by one event loop.

    A tx is in exactly one of mempool / included / dropped after broadcast.
    confirmations = height - inclusion_height + 1 once the carrying block
    exists (0 before), and inject_reorg moves every tx at or above the mempool
    with <= depth confirmations into dropped without touching the height.
    """

    def __init__(self, params: ChainParams, loop: EventLoop, trace: Trace,
                 rng: np.random.Generator) -> None:
        self.params = params
        self.loop = loop
        self.trace = trace
        self.rng = rng
        self.txs: dict[str, Tx] = {}
        self.dropped: set[str] = set()
        self._emitted_height = 0
        loop.time_hooks.append(self._emit_blocks_until)

    # -- block clock -------------------------------------------------------

    def height(self, t: int | None = None) -> int:
        t = self.loop.now if t is None else t
        return t // self.params.block_interval_ms

    def _emit_blocks_until(self, t: int) -> None:
        h = self.height(t)
        while self._emitted_height < h:
            self._emitted_height += 1
            self.trace.emit(self._emitted_height * self.params.block_interval_ms,
                            "chain", "block", height=self._emitted_height)

    # -- transactions ------------------------------------------------------

    def broadcast(self, tx_hash: str, sender: str, pay_id: str | None = None,
                  **meta) -> Tx:
        if tx_hash in self.txs:
            raise DuplicateBroadcast(tx_hash)
        now = self.loop.now
        delay = int(round(float(self.params.inclusion.sample(self.rng))))
        included_at = now + delay
        inclusion_height = included_at // self.params.block_interval_ms + 1
        tx = Tx(tx_hash, sender, now, included_at, inclusion_height, pay_id, dict(meta))
        self.txs[tx_hash] = tx
        self.trace.emit(now, "chain", "tx_broadcast", tx_hash=tx_hash, sender=sender,
                        pay_id=pay_id)
        self.loop.at(included_at, lambda: self._on_included(tx))
        return tx

    def _on_included(self, tx: Tx) -> None:
        if tx.tx_hash in self.dropped:
            return
        self.trace.emit(self.loop.now, "chain", "tx_included", tx_hash=tx.tx_hash,
                        height=tx.inclusion_height)

    def status(self, tx_hash: str, t: int | None = None) -> str:
        tx = self.txs[tx_hash]
        if tx.tx_hash in self.dropped:
            return "dropped"
        t = self.loop.now if t is None else t
        return "included" if t >= tx.included_at else "mempool"

    def confirmations(self, tx_hash: str, t: int | None = None) -> int:
        tx = self.txs[tx_hash]
        t = self.loop.now if t is None else t
        if tx.tx_hash in self.dropped or t < tx.included_at:
            return 0
        return max(0, self.height(t) - tx.inclusion_height + 1)

    def is_final(self, tx_hash: str, depth: int, t: int | None = None) -> bool:
        if self.status(tx_hash, t) != "included":
            return False
        return self.confirmations(tx_hash, t) >= depth

    def time_of_confirmations(self, tx_hash: str, depth: int) -> int:
        """Earliest t with confirmations >= depth, ignoring future reorgs."""
        tx = self.txs[tx_hash]
        if depth <= 0:
            return tx.included_at
        return (tx.inclusion_height + depth - 1) * self.params.block_interval_ms

    def inject_reorg(self, depth: int) -> set[str]:
        """Replace the top ``depth`` blocks with an empty branch.

        Every included tx with confirmations <= depth is dropped; height is
        unchanged and dropped txs never re-enter the mempool.
        """
        if depth < 1:
            raise ValueError("reorg depth must be >= 1")
        now = self.loop.now
        removed: set[str] = set()
        for tx in self.txs.values():
            if tx.tx_hash in self.dropped:
                continue
            if self.status(tx.tx_hash) != "included":
                continue
            if self.confirmations(tx.tx_hash) <= depth:
                removed.add(tx.tx_hash)
        self.dropped.update(removed)
        self.trace.emit(now, "chain", "reorg", depth=depth, dropped=sorted(removed))
        for tx_hash in sorted(removed):
            self.trace.emit(now, "chain", "tx_dropped", tx_hash=tx_hash,
                            pay_id=self.txs[tx_hash].pay_id)
        return removed
