"""Chain-simulator tests: inclusion timing, finality, reorgs, revert model."""

import math

import numpy as np
import pytest

from x402sim.chain import (
    Chain,
    ChainParams,
    DuplicateBroadcast,
    InclusionModel,
    chain_epsilon,
    min_depth_for_target,
    revert_probability,
    sample_revert,
)
from x402sim.sim import EventLoop, Trace
from x402sim.stats import wilson_interval


def make_chain(seed=0, t_b=2000, p=0.05):
    loop = EventLoop()
    trace = Trace()
    params = ChainParams(block_interval_ms=t_b, reorg_prob=p, seed=seed)
    chain = Chain(params, loop, trace, np.random.default_rng(seed))
    return loop, trace, chain


class TestInclusionModel:
    def test_mean_matches_block_interval(self):
        model = InclusionModel(mean_ms=2000.0, truncate_ms=20000.0)
        rng = np.random.default_rng(7)
        draws = model.sample(rng, 100_000)
        assert abs(float(draws.mean()) - 2000.0) / 2000.0 < 0.02

    def test_truncation(self):
        model = InclusionModel(mean_ms=2000.0, truncate_ms=20000.0)
        rng = np.random.default_rng(8)
        draws = model.sample(rng, 100_000)
        assert float(draws.max()) <= 20000.0

    def test_tail_probability_closed_form(self):
        # P(T_inc > 250) = e^(-250/2000) for the clamped exponential; the
        # Monte Carlo estimate must agree within its Wilson interval.
        model = InclusionModel(mean_ms=2000.0, truncate_ms=20000.0)
        expected = math.exp(-0.125)
        assert model.survival(250.0) == pytest.approx(expected)
        rng = np.random.default_rng(9)
        draws = model.sample(rng, 100_000)
        hits = int((draws > 250.0).sum())
        low, high = wilson_interval(hits, 100_000)
        assert low <= expected <= high

    def test_survival_edges(self):
        model = InclusionModel(mean_ms=2000.0, truncate_ms=20000.0)
        assert model.survival(-1.0) == 1.0
        assert model.survival(20000.0) == 0.0

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            InclusionModel(kind="weibull")


class TestBroadcastAndFinality:
    def test_immediate_confirmations_zero(self):
        loop, _, chain = make_chain()
        tx = chain.broadcast("0xt1", "0xsender")
        assert chain.confirmations("0xt1") == 0
        assert chain.status("0xt1") == "mempool" or tx.included_at == 0

    def test_advance_past_inclusion(self):
        loop, _, chain = make_chain(seed=3)
        tx = chain.broadcast("0xt1", "0xsender")
        loop.run(until=tx.included_at + 1)
        assert chain.status("0xt1") == "included"

    def test_double_broadcast(self):
        _, _, chain = make_chain()
        chain.broadcast("0xt1", "0xsender")
        with pytest.raises(DuplicateBroadcast):
            chain.broadcast("0xt1", "0xsender")

    def test_one_confirmation_at_inclusion_height(self):
        loop, _, chain = make_chain(seed=4)
        tx = chain.broadcast("0xt1", "0xsender")
        at_block = tx.inclusion_height * chain.params.block_interval_ms
        loop.run(until=at_block)
        assert chain.height() == tx.inclusion_height
        assert chain.confirmations("0xt1") == 1

    def test_depth_zero_final_upon_inclusion(self):
        loop, _, chain = make_chain(seed=5)
        tx = chain.broadcast("0xt1", "0xsender")
        assert not chain.is_final("0xt1", 0)
        loop.run(until=tx.included_at)
        assert chain.is_final("0xt1", 0)

    def test_dropped_tx_never_final(self):
        loop, _, chain = make_chain(seed=6)
        tx = chain.broadcast("0xt1", "0xsender")
        loop.run(until=tx.included_at + chain.params.block_interval_ms)
        chain.inject_reorg(depth=10)
        for depth in (0, 1, 3):
            assert not chain.is_final("0xt1", depth)

    def test_time_of_confirmations_oracle(self):
        # Straight-line re-derivation of the event arithmetic.
        loop, _, chain = make_chain(seed=11)
        tx = chain.broadcast("0xt1", "0xsender")
        t_b = chain.params.block_interval_ms
        expected_height = tx.included_at // t_b + 1
        assert tx.inclusion_height == expected_height
        for depth in (1, 3, 12):
            assert chain.time_of_confirmations("0xt1", depth) == \
                (expected_height + depth - 1) * t_b
        loop.run(until=chain.time_of_confirmations("0xt1", 3))
        assert chain.confirmations("0xt1") == 3


class TestRevertModel:
    def test_zero_probability_never_reverts(self):
        params = ChainParams(reorg_prob=0.0)
        rng = np.random.default_rng(0)
        assert not sample_revert(0, params, rng, size=10_000).any()

    def test_depth_zero_rate_within_ci(self):
        params = ChainParams(reorg_prob=0.05)
        rng = np.random.default_rng(21)
        hits = int(sample_revert(0, params, rng, size=100_000).sum())
        low, high = wilson_interval(hits, 100_000)
        assert low <= 0.05 <= high

    def test_depth_three_closed_form_rate(self):
        params = ChainParams(reorg_prob=0.05)
        rng = np.random.default_rng(22)
        n = 10_000_000
        hits = int(sample_revert(3, params, rng, size=n).sum())
        low, high = wilson_interval(hits, n)
        assert low <= 0.05 ** 3 <= high

    def test_monotone_in_depth(self):
        params = ChainParams(reorg_prob=0.05)
        rates = []
        for depth in (0, 1, 2, 3, 6):
            rng = np.random.default_rng(100 + depth)
            rates.append(float(sample_revert(depth, params, rng, size=100_000).mean()))
        assert all(a >= b for a, b in zip(rates, rates[1:]))

    def test_revert_probability_closed_form(self):
        assert revert_probability(0, 0.05) == 0.05
        assert revert_probability(1, 0.05) == 0.05
        assert revert_probability(3, 0.05) == pytest.approx(1.25e-4)


class TestReorgInjection:
    def test_depth_one_drops_only_newest_block(self):
        loop, _, chain = make_chain(seed=30)
        t_b = chain.params.block_interval_ms
        old = chain.broadcast("0xold", "0xs")
        loop.run(until=(old.inclusion_height + 4) * t_b)
        young = chain.broadcast("0xyoung", "0xs")
        loop.run(until=chain.time_of_confirmations("0xyoung", 1))
        assert chain.confirmations("0xyoung") == 1
        dropped = chain.inject_reorg(depth=1)
        assert dropped == {"0xyoung"}
        assert chain.status("0xold") == "included"

    def test_survives_reorg_one_deeper(self):
        loop, _, chain = make_chain(seed=31)
        depth = 3
        tx = chain.broadcast("0xt", "0xs")
        loop.run(until=chain.time_of_confirmations("0xt", depth + 1))
        assert chain.confirmations("0xt") == depth + 1
        dropped = chain.inject_reorg(depth=depth)
        assert "0xt" not in dropped

    def test_mempool_txs_unaffected(self):
        loop, _, chain = make_chain(seed=32)
        chain.broadcast("0xt", "0xs")
        dropped = chain.inject_reorg(depth=5)
        assert dropped == set()
        assert chain.status("0xt") == "mempool"


class TestCalibration:
    def test_corollary_arithmetic_example(self):
        alpha = math.log(10) / 2.5
        k_star = min_depth_for_target(alpha, 1e-2)
        assert k_star == 5
        assert chain_epsilon(k_star, alpha) <= 1e-2 * (1 + 1e-12)

    def test_depth_formula_over_grid(self):
        for alpha in (0.3, 0.5, math.log(10) / 2.5, 1.0, 2.0):
            for eps in (1e-1, 1e-2, 1e-4):
                k_star = min_depth_for_target(alpha, eps)
                assert chain_epsilon(k_star, alpha) <= eps * (1 + 1e-12)
                if k_star > 0:
                    assert chain_epsilon(k_star - 1, alpha) > eps * (1 - 1e-12)


class TestDeterminism:
    def test_identical_seed_identical_trace(self):
        def run(seed):
            loop, trace, chain = make_chain(seed=seed)
            for i in range(10):
                chain.broadcast(f"0xt{i}", "0xs")
                loop.run(until=loop.now + 1500)
            chain.inject_reorg(depth=2)
            loop.run(until=40_000)
            return trace.to_jsonl()

        assert run(77) == run(77)
        assert run(77) != run(78)
