import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from cfb_filter import (
    BetaSchedule,
    ConfigurationError,
    FeatureBankSet,
    RangeError,
    SizeError,
    ThresholdPolicy,
    ThresholdTracker,
    WarmupError,
    beta_at,
    class_stats,
    prototype_scores,
    threshold,
    thresholds_for_bank,
)
from cfb_filter.threshold import ClassStats


def test_class_stats_example():
    s = class_stats([0.1, 0.2, 0.3])
    mu, sd = oracles.mean_std([0.1, 0.2, 0.3])
    assert s.mu == pytest.approx(0.2, abs=1e-15)
    assert s.sigma == pytest.approx(math.sqrt(0.02 / 3), abs=1e-15)
    assert (s.mu, s.sigma) == pytest.approx((mu, sd), abs=1e-15)
    assert s.sample_count == 3


@pytest.mark.parametrize("scores, mu", [([0.7, 0.7, 0.7], 0.7), ([0.5], 0.5)])
def test_class_stats_zero_spread(scores, mu):
    s = class_stats(scores)
    assert s.mu == mu and s.sigma == 0.0


def test_class_stats_empty():
    with pytest.raises(SizeError):
        class_stats([])


@given(st.lists(st.floats(0, 2), min_size=1, max_size=50))
def test_class_stats_population_form(xs):
    s = class_stats(xs)
    assert s.sigma >= 0
    assert s.sigma == pytest.approx(float(np.std(xs)), abs=1e-9)
    assert (s.sigma == 0) == (len(set(xs)) == 1) or s.sigma < 1e-12


def test_beta_schedule_examples():
    lin = BetaSchedule(1.0, 2.0, total_steps=10)
    assert beta_at(5, lin) == 1.5
    assert beta_at(0, lin) == 1.0
    assert beta_at(10, lin) == 2.0
    assert beta_at(7, BetaSchedule.fixed(0.0, 10)) == 0.0


@given(st.floats(-5, 5), st.floats(-5, 5), st.integers(1, 10**6))
def test_beta_endpoints_exact(b0, b1, T):
    s = BetaSchedule(b0, b1, T)
    assert beta_at(0, s) == b0
    assert beta_at(T, s) == b1


def test_beta_out_of_range():
    s = BetaSchedule(1.0, 2.0, 10)
    with pytest.raises(RangeError):
        beta_at(-1, s)
    with pytest.raises(RangeError):
        beta_at(11, s)


def test_threshold_examples():
    s = class_stats([0.1, 0.2, 0.3])
    assert threshold(s, 1.0) == pytest.approx(0.2 + math.sqrt(0.02 / 3), abs=1e-15)
    assert threshold(ClassStats(0, 0.2, 0.05, 10), 0.0) == 0.2
    assert threshold(ClassStats(0, 0.3, 0.0, 10), 2.0) == 0.3


@given(st.floats(0, 1), st.floats(1e-3, 1), st.floats(-3, 3), st.floats(-3, 3))
def test_threshold_monotone_in_beta(mu, sigma, b1, b2):
    s = ClassStats(0, mu, sigma, 5)
    if b1 < b2:
        assert threshold(s, b1) <= threshold(s, b2)


def test_thresholds_for_bank_examples(tri_bank):
    bs = FeatureBankSet(2, 4, 3)
    for c, v in [(0, (1.0, 2.0, 3.0)), (1, (-1.0, 0.5, 0.0))]:
        for _ in range(4):
            bs.push(c, v)
    taus = thresholds_for_bank(bs, 1, "cosine", 2.0)
    assert taus == pytest.approx({0: 0.0, 1: 0.0}, abs=1e-12)

    ortho = FeatureBankSet(1, 2, 2)
    ortho.push(0, (1.0, 0.0))
    ortho.push(0, (0.0, 1.0))
    assert thresholds_for_bank(ortho, 1, "cosine", 0.0)[0] == pytest.approx(1.0, abs=1e-15)

    mu, sd = oracles.mean_std(oracles.loo_scores([[1, 0], [0.6, 0.8], [0, 1]], 1, "cosine"))
    assert (mu, sd) == pytest.approx((0.26666666666666666, 0.09428090415820634), abs=1e-12)
    tau = thresholds_for_bank(tri_bank, 1, "cosine", 1.0)[0]
    assert tau == pytest.approx(mu + sd, abs=1e-7)
    assert tau == pytest.approx(0.3610, abs=1e-4)


def test_thresholds_need_warm_banks():
    bs = FeatureBankSet(2, 3, 2)
    for _ in range(3):
        bs.push(0, (1.0, 0.0))
    bs.push(1, (0.0, 1.0))
    with pytest.raises(WarmupError) as info:
        thresholds_for_bank(bs, 1, "cosine", 1.0)
    assert info.value.class_id == 1


def test_tracker_recomputes_after_push(rng):
    bs = FeatureBankSet(1, 20, 4)
    for _ in range(20):
        bs.push(0, rng.standard_normal(4))
    tracker = ThresholdTracker(2, "cosine")
    pol = ThresholdPolicy.adaptive(1.0, 1.0)
    first = tracker.thresholds(bs, pol)
    assert tracker.thresholds(bs, pol) == first
    bs.push(0, rng.standard_normal(4))
    again = tracker.thresholds(bs, pol)
    fresh = thresholds_for_bank(bs, 2, "cosine", 1.0)
    assert again == fresh
    assert again != first


def test_determinism_bitwise(rng):
    X = rng.standard_normal((50, 8))
    bs1, bs2 = FeatureBankSet(1, 50, 8), FeatureBankSet(1, 50, 8)
    for x in X:
        bs1.push(0, x)
        bs2.push(0, x)
    assert thresholds_for_bank(bs1, 3, "cosine", 1.3) == thresholds_for_bank(bs2, 3, "cosine", 1.3)


def test_policy_validation():
    with pytest.raises(ConfigurationError):
        ThresholdPolicy.fixed(2.5, "cosine")
    with pytest.raises(ConfigurationError):
        ThresholdPolicy.fixed(0.0, "cosine")
    assert ThresholdPolicy.fixed(2.5, "l2").fixed_tau == 2.5
    with pytest.raises(ConfigurationError):
        ThresholdPolicy("sometimes")


def _gaussian_bank(seed, L=100, D=16):
    rng = np.random.default_rng(seed)
    mu = rng.standard_normal(D)
    mu *= 6 / math.sqrt(2) / np.linalg.norm(mu)
    return mu + rng.standard_normal((L, D))


def test_beta_zero_self_consistency():
    fracs = []
    for seed in range(30):
        s = prototype_scores(_gaussian_bank(seed), 5)
        st_ = class_stats(s)
        frac = float(np.mean(s > threshold(st_, 0.0)))
        assert frac < 1.0
        fracs.append(frac)
    assert abs(np.mean(fracs) - 0.5) <= 0.1
