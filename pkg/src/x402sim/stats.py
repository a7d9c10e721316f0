"""Shared metric kernel: rate estimates with Wilson intervals, latency
summaries, and the trace folds every harness reports through.

Metric names in report JSON are fixed: rgp, dgr, leak_rate, mutation_rate,
selection_rate, l_grant, t_gf.
"""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass

import numpy as np

from .sim import Trace


class BadCounts(ValueError):
    pass


def wilson_interval(successes: int, trials: int, z: float = 1.96) -> tuple[float, float]:
    """95% Wilson score bounds (default z), clamped to [0, 1]."""
    if trials < 1 or successes < 0 or successes > trials:
        raise BadCounts(f"successes={successes}, trials={trials}")
    n = float(trials)
    phat = successes / n
    z2 = z * z
    denom = 1.0 + z2 / n
    center = phat + z2 / (2.0 * n)
    half = z * math.sqrt(phat * (1.0 - phat) / n + z2 / (4.0 * n * n))
    # The exact bounds at the extremes are 0 and 1; snap to avoid float noise.
    low = 0.0 if successes == 0 else max(0.0, (center - half) / denom)
    high = 1.0 if successes == trials else min(1.0, (center + half) / denom)
    return low, high


@dataclass(frozen=True)
class RateEstimate:
    successes: int
    trials: int
    point: float
    ci_low: float
    ci_high: float

    @classmethod
    def from_counts(cls, successes: int, trials: int, z: float = 1.96) -> "RateEstimate":
        low, high = wilson_interval(successes, trials, z)
        return cls(int(successes), int(trials), successes / trials, low, high)

    def half_width(self) -> float:
        return (self.ci_high - self.ci_low) / 2.0

    def overlaps(self, other: "RateEstimate") -> bool:
        return not (self.ci_high < other.ci_low or other.ci_high < self.ci_low)

    def to_json(self) -> dict:
        return {
            "successes": self.successes,
            "trials": self.trials,
            "point": self.point,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
        }


@dataclass(frozen=True)
class LatencySummary:
    median: float
    iqr: float
    samples: int

    @classmethod
    def from_samples(cls, samples) -> "LatencySummary":
        values = [float(v) for v in samples]
        if not values:
            return cls(float("nan"), 0.0, 0)
        if len(values) == 1:
            return cls(values[0], 0.0, 1)
        med = statistics.median(values)
        q1, _, q3 = statistics.quantiles(values, n=4, method="inclusive")
        return cls(med, q3 - q1, len(values))

    def to_json(self) -> dict:
        median = None if math.isnan(self.median) else self.median
        return {"median": median, "iqr": self.iqr, "samples": self.samples}


@dataclass
class Attempts:
    """Columnar per-attempt outcomes shared by sweeps and trace scans.

    final_time is NaN where the settlement never reached the required
    confirmation depth on the canonical chain; grant_time is NaN where no
    grant was issued.
    """

    presented: np.ndarray
    granted: np.ndarray
    grant_time: np.ndarray
    final_time: np.ndarray

    @classmethod
    def from_rows(cls, rows) -> "Attempts":
        nan = float("nan")
        presented = np.array([r[0] for r in rows], dtype=float)
        granted = np.array([r[1] for r in rows], dtype=bool)
        grant_time = np.array([nan if r[2] is None else r[2] for r in rows], dtype=float)
        final_time = np.array([nan if r[3] is None else r[3] for r in rows], dtype=float)
        return cls(presented, granted, grant_time, final_time)

    def __len__(self) -> int:
        return int(self.granted.shape[0])


def compute_rgp(attempts: Attempts) -> RateEstimate:
    """Revert-grant probability: granted but never finalized, per attempt."""
    revert_grants = int(np.count_nonzero(attempts.granted & np.isnan(attempts.final_time)))
    return RateEstimate.from_counts(revert_grants, len(attempts))


def compute_latencies(attempts: Attempts) -> dict[str, LatencySummary]:
    """Request-to-grant latency and the grant-to-finality gap, both always."""
    granted = attempts.granted
    l_grant = attempts.grant_time[granted] - attempts.presented[granted]
    finalized = granted & ~np.isnan(attempts.final_time)
    t_gf = np.maximum(0.0, attempts.final_time[finalized] - attempts.grant_time[finalized])
    return {
        "l_grant": LatencySummary.from_samples(l_grant.tolist()),
        "t_gf": LatencySummary.from_samples(t_gf.tolist()),
    }


# -- trace folds -------------------------------------------------------------


def grant_count(trace: Trace, pay_id: str) -> int:
    return sum(1 for e in trace.select("grant") if e.fields.get("pay_id") == pay_id)


def settlement_count(trace: Trace, pay_id: str) -> int:
    """Settlements on the canonical chain: successes minus reverted ones."""
    ok_hashes = {e.fields.get("tx_hash") for e in trace.select("settle_ok")
                 if e.fields.get("pay_id") == pay_id}
    reverted = {e.fields.get("tx_hash") for e in trace.select("settle_reverted")}
    return len(ok_hashes - reverted)


def preemption_events(trace: Trace) -> list[str]:
    """pay_ids settled exactly once but never granted (paid-but-denied)."""
    settled = {e.fields.get("pay_id") for e in trace.select("settle_ok")}
    out = []
    for pay_id in sorted(p for p in settled if p):
        if settlement_count(trace, pay_id) == 1 and grant_count(trace, pay_id) == 0:
            out.append(pay_id)
    return out


def duplicate_grant_rate(trace: Trace, pay_id: str) -> int:
    """HTTP grants per intended payment identity."""
    return grant_count(trace, pay_id)


def request_outcomes(trace: Trace) -> list[dict]:
    return [e.fields for e in trace.select("request_complete")]


def leak_rate(trace: Trace) -> RateEstimate:
    """Paid content served from cache to unpaid requesters, per unpaid request."""
    unpaid = [f for f in request_outcomes(trace) if not f.get("paid")]
    if not unpaid:
        raise BadCounts("no unpaid requests in trace")
    leaks = sum(1 for f in unpaid if f.get("served_from_cache"))
    return RateEstimate.from_counts(leaks, len(unpaid))


def mutation_rate(trace: Trace) -> RateEstimate:
    outcomes = request_outcomes(trace)
    if not outcomes:
        raise BadCounts("no requests in trace")
    mutated = sum(1 for f in outcomes if f.get("mutated"))
    return RateEstimate.from_counts(mutated, len(outcomes))
