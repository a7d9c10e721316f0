"""Statistics-kernel tests: Wilson bounds, latency summaries, trace folds."""

import math

import numpy as np
import pytest

from x402sim.sim import Trace
from x402sim.stats import (
    Attempts,
    BadCounts,
    LatencySummary,
    RateEstimate,
    compute_latencies,
    compute_rgp,
    grant_count,
    leak_rate,
    mutation_rate,
    preemption_events,
    settlement_count,
    wilson_interval,
)


class TestWilson:
    def test_zero_successes_closed_form(self):
        # At s=0 the upper bound collapses to z^2/(n+z^2); independent oracle.
        z = 1.96
        low, high = wilson_interval(0, 100)
        assert low == 0.0
        assert high == pytest.approx(z * z / (100 + z * z), abs=1e-12)
        assert round(high, 4) == 0.0370

    def test_all_successes_symmetry(self):
        low0, high0 = wilson_interval(0, 100)
        low1, high1 = wilson_interval(100, 100)
        assert high1 == 1.0
        assert low1 == pytest.approx(1.0 - high0, abs=1e-12)

    def test_half_symmetric_about_half(self):
        low, high = wilson_interval(50, 100)
        assert (low + high) / 2 == pytest.approx(0.5, abs=1e-12)

    def test_bad_counts(self):
        for s, n in ((-1, 10), (11, 10), (0, 0)):
            with pytest.raises(BadCounts):
                wilson_interval(s, n)

    def test_interval_contains_point(self):
        rng = np.random.default_rng(5)
        for _ in range(500):
            n = int(rng.integers(1, 10_000))
            s = int(rng.integers(0, n + 1))
            est = RateEstimate.from_counts(s, n)
            assert 0.0 <= est.ci_low <= est.point <= est.ci_high <= 1.0

    def test_width_shrinks_like_inverse_sqrt_n(self):
        widths = []
        for n in (100, 1000, 10_000):
            low, high = wilson_interval(n // 2, n)
            widths.append(high - low)
        # Each 10x in n shrinks the width by ~sqrt(10).
        for a, b in zip(widths, widths[1:]):
            assert a / b == pytest.approx(math.sqrt(10), rel=0.05)


class TestLatencySummary:
    def test_single_sample(self):
        s = LatencySummary.from_samples([42.0])
        assert (s.median, s.iqr, s.samples) == (42.0, 0.0, 1)

    def test_inclusive_quartiles(self):
        # statistics.quantiles(method="inclusive") on 1..9: q1=3, q3=7.
        s = LatencySummary.from_samples(range(1, 10))
        assert s.median == 5
        assert s.iqr == pytest.approx(4.0)

    def test_empty(self):
        s = LatencySummary.from_samples([])
        assert s.samples == 0 and math.isnan(s.median)


def attempts_fixture():
    nan = float("nan")
    rows = [
        # (presented, granted, grant_time, final_time)
        (0.0, True, 250.0, 6250.0),    # optimistic grant, later final
        (0.0, True, 250.0, None),      # revert-grant
        (0.0, False, None, None),      # rejected attempt
        (0.0, True, 6250.0, 6250.0),   # conservative grant at finality
    ]
    return Attempts.from_rows(rows)


class TestAttemptMetrics:
    def test_rgp_matches_straight_line_rescan(self):
        attempts = attempts_fixture()
        est = compute_rgp(attempts)
        # Independent rescan over the same raw rows.
        rescan = 0
        for i in range(len(attempts)):
            if attempts.granted[i] and math.isnan(attempts.final_time[i]):
                rescan += 1
        assert est.successes == rescan == 1
        assert est.trials == 4

    def test_latency_event_arithmetic(self):
        out = compute_latencies(attempts_fixture())
        # l_grant over the three grants: 250, 250, 6250.
        assert out["l_grant"].median == 250.0
        assert out["l_grant"].samples == 3
        # t_gf over finalized grants: 6000 and 0.
        assert out["t_gf"].samples == 2
        assert out["t_gf"].median == 3000.0

    def test_t_gf_clamped_at_zero(self):
        rows = [(0.0, True, 7000.0, 6000.0)]
        out = compute_latencies(Attempts.from_rows(rows))
        assert out["t_gf"].median == 0.0


def fold_trace():
    trace = Trace()
    trace.emit(0, "server", "grant", pay_id="p1", resource_id="/a")
    trace.emit(1, "server", "grant", pay_id="p1", resource_id="/a")
    trace.emit(2, "ledger", "settle_ok", pay_id="p1", tx_hash="0x1")
    trace.emit(3, "ledger", "settle_ok", pay_id="p2", tx_hash="0x2")
    trace.emit(4, "ledger", "settle_reverted", pay_id="p2", tx_hash="0x2")
    return trace


class TestTraceFolds:
    def test_grant_and_settlement_counts(self):
        trace = fold_trace()
        assert grant_count(trace, "p1") == 2
        assert settlement_count(trace, "p1") == 1
        assert settlement_count(trace, "p2") == 0  # reverted off the canonical chain

    def test_preemption_detector(self):
        trace = Trace()
        trace.emit(0, "ledger", "settle_ok", pay_id="p3", tx_hash="0x3")
        assert preemption_events(trace) == ["p3"]
        trace.emit(1, "server", "grant", pay_id="p3", resource_id="/a")
        assert preemption_events(trace) == []

    def test_leak_and_mutation_rates(self):
        trace = Trace()
        trace.emit(0, "path", "request_complete", status=200, mutated=False,
                   served_from_cache=False, paid=True)
        for _ in range(3):
            trace.emit(1, "path", "request_complete", status=200, mutated=False,
                       served_from_cache=True, paid=False)
        trace.emit(2, "path", "request_complete", status=402, mutated=True,
                   served_from_cache=False, paid=False)
        assert leak_rate(trace).successes == 3
        assert leak_rate(trace).trials == 4
        assert mutation_rate(trace).successes == 1
        assert mutation_rate(trace).trials == 5
