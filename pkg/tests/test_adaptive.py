import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from mtsc.adaptive import (
    RateAllocation,
    allocate_batch,
    allocate_from_lambda,
    allocate_rates,
    importance_weighted_distortion,
    score_importance,
    snr_weight,
    uniform_allocation,
)
from mtsc.channel import ChannelState

from oracles import brute_force_min_cost, greedy_allocation, lr_targets

score_vectors = hnp.arrays(np.float64, 8, elements=st.floats(0, 10, allow_subnormal=False))


def block_vec(norms):
    v = np.zeros(32)
    for i, n in enumerate(norms):
        v[4 * i] = n
    return v


class TestScores:
    def test_one_hot(self):
        np.testing.assert_array_equal(score_importance(block_vec([1, 0, 0, 0, 0, 0, 0, 0])), [1, 0, 0, 0, 0, 0, 0, 0])

    def test_equal_norms(self):
        np.testing.assert_allclose(score_importance(np.ones(32)), np.full(8, 1 / 8), rtol=1e-15)

    def test_arithmetic(self):
        np.testing.assert_allclose(score_importance(block_vec([2, 1, 1, 0, 0, 0, 0, 0])), [0.5, 0.25, 0.25, 0, 0, 0, 0, 0])

    def test_zero_is_uniform(self):
        np.testing.assert_array_equal(score_importance(np.zeros(32)), np.full(8, 1 / 8))

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            score_importance(np.full(32, np.nan))

    @given(hnp.arrays(np.float64, 32, elements=st.floats(-100, 100)), st.floats(1e-3, 1e3))
    def test_scale_invariance(self, v, c):
        a, b = score_importance(v), score_importance(c * v)
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-15)
        assert abs(a.sum() - 1.0) < 1e-12 and np.all(a >= 0)
        assert allocate_from_lambda(a, 1.0, 16).s == allocate_from_lambda(b, 1.0, 16).s or np.allclose(a, b, atol=1e-9)


class TestAllocate:
    @pytest.mark.parametrize("lam", [0.0, 0.3, 1.0])
    def test_equal_scores(self, lam):
        assert allocate_from_lambda(np.full(8, 1 / 8), lam, 16).s == (2,) * 8

    def test_capped_one_hot(self):
        assert allocate_from_lambda(np.eye(8)[0], 1.0, 8).s == (4, 1, 1, 1, 1, 0, 0, 0)

    def test_capped_one_hot_is_optimal(self):
        targets = lr_targets(np.eye(8)[0], 1.0, 8)
        _, tied = brute_force_min_cost(targets, 8)
        assert any(tuple(t) == (4, 1, 1, 1, 1, 0, 0, 0) for t in tied)

    def test_zero_budget(self):
        assert allocate_from_lambda(np.eye(8)[2], 0.7, 0).s == (0,) * 8

    def test_over_budget_clamped_with_warning(self):
        a = allocate_from_lambda(np.full(8, 1 / 8), 1.0, 40)
        assert a.s == (4,) * 8 and a.warnings and a.total_budget == 40

    def test_snr_weight(self):
        assert snr_weight(-10) == 0.0 and snr_weight(12) == 1.0 and snr_weight(3) == 0.5

    def test_channel_state_accepted(self):
        scores = np.eye(8)[0]
        assert allocate_rates(scores, ChannelState(12.0), 8) == allocate_from_lambda(scores, 1.0, 8)
        assert allocate_rates(scores, ChannelState(-6.0), 8) == uniform_allocation(8)

    def test_batch_matches_rowwise(self):
        gen = np.random.default_rng(0)
        scores = gen.random((20, 8))
        scores /= scores.sum(axis=1, keepdims=True)
        snr = gen.uniform(-8, 14, 20)
        budget = gen.integers(0, 33, 20)
        out = allocate_batch(scores, snr, budget)
        for i in range(20):
            assert tuple(out[i]) == allocate_rates(scores[i], snr[i], budget[i]).s

    @given(score_vectors, st.floats(0, 1), st.integers(0, 40))
    def test_budget_exact(self, raw, lam, budget):
        scores = score_importance(block_vec(raw))
        a = allocate_from_lambda(scores, lam, budget)
        assert a.total == min(budget, 32)
        assert all(0 <= v <= 4 for v in a.s)

    @given(score_vectors, st.integers(0, 32))
    def test_monotone_in_importance(self, raw, budget):
        scores = score_importance(block_vec(raw))
        s = allocate_from_lambda(scores, 1.0, budget).s
        for i in range(8):
            for j in range(8):
                if scores[i] >= scores[j]:
                    assert s[i] >= min(4, s[j]) - (1 if scores[i] == scores[j] else 0)

    @given(score_vectors, st.floats(0, 1), st.integers(0, 32))
    def test_matches_greedy_and_brute_force(self, raw, lam, budget):
        scores = score_importance(block_vec(raw))
        s = np.array(allocate_from_lambda(scores, lam, budget).s)
        targets = lr_targets(scores, lam, budget)
        assert np.array_equal(s, greedy_allocation(targets, budget))
        best, _ = brute_force_min_cost(targets, budget)
        assert ((s - targets) ** 2).sum() <= best + 1e-9


class TestSideInfo:
    def test_round_trip(self):
        a = RateAllocation((4, 1, 1, 1, 1, 0, 0, 0), 8)
        raw = a.to_bytes()
        assert raw[:4] == bytes([0, 4, 1, 1])
        assert RateAllocation.from_bytes(raw) == a

    def test_bad_bytes(self):
        with pytest.raises(ValueError):
            RateAllocation.from_bytes(bytes([1, 2, 0, 2]))
        with pytest.raises(ValueError):
            RateAllocation.from_bytes(b"\x00")

    def test_cap_enforced(self):
        with pytest.raises(ValueError):
            RateAllocation((5, 0, 0, 0, 0, 0, 0, 0), 5)


class TestDistortion:
    def test_identical(self):
        v = np.arange(32.0)
        assert importance_weighted_distortion(v, v, np.full(8, 1 / 8)) == 0.0

    def test_zero_score_block(self):
        v = np.zeros(32)
        w = v.copy()
        w[5] = 3.0
        assert importance_weighted_distortion(v, w, np.eye(8)[0]) == 0.0

    def test_weighted(self):
        v = np.zeros(32)
        w = v.copy()
        w[0] = 1.0
        scores = np.array([0.5, 0.5, 0, 0, 0, 0, 0, 0])
        assert importance_weighted_distortion(v, w, scores) == 0.5

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            importance_weighted_distortion(np.zeros(32), np.zeros(28), np.full(8, 1 / 8))
