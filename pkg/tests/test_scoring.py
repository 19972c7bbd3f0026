import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from cfb_filter import (
    ConfigurationError,
    FeatureBankSet,
    SizeError,
    ValidationError,
    cosine_distance,
    k_from_ratio,
    knn_indices,
    ood_score,
    ood_scores,
    prototype_scores,
)
from cfb_filter.scoring import pairwise


@pytest.mark.parametrize(
    "a, b, expected",
    [((1, 0), (1, 0), 0.0), ((1, 0), (0, 1), 1.0), ((1, 0), (-1, 0), 2.0)],
)
def test_cosine_distance_examples(a, b, expected):
    assert cosine_distance(a, b) == pytest.approx(expected, abs=1e-15)


def test_cosine_distance_errors():
    with pytest.raises(ValidationError):
        cosine_distance((1, 0), (1, 0, 0))
    with pytest.raises(ValidationError):
        cosine_distance((0, 0), (1, 0))


@pytest.mark.parametrize("L, r, k", [(100, 1 / 20, 5), (20, 1 / 20, 1), (10, 1 / 20, 1), (500, 0.05, 25), (7, 1.0, 7)])
def test_k_from_ratio(L, r, k):
    assert k_from_ratio(L, r) == k


@pytest.mark.parametrize("r", [0.0, -0.1, 1.5, float("nan")])
def test_k_from_ratio_rejects_bad_ratio(r):
    with pytest.raises(ConfigurationError):
        k_from_ratio(100, r)


def test_knn_example(tri_bank):
    bank = tri_bank.bank(0)
    assert knn_indices((1.0, 0.0), bank, 2).tolist() == [0, 1]
    assert sorted(knn_indices((0.3, -2.0), bank, 3).tolist()) == [0, 1, 2]


def test_knn_tie_break_prefers_older():
    bs = FeatureBankSet(1, 6, 2)
    bs.push(0, (1.0, 1.0))
    for v in [(0.0, 1.0), (1.0, 0.0), (-1.0, 0.5), (0.2, -1.0)]:
        bs.push(0, v)
    bs.push(0, (1.0, 1.0))
    assert knn_indices((2.0, 2.0), bs.bank(0), 1).tolist() == [0]
    assert knn_indices((2.0, 2.0), bs.bank(0), 2).tolist() == [0, 5]


def test_knn_too_large_k(tri_bank):
    with pytest.raises(SizeError):
        knn_indices((1.0, 0.0), tri_bank.bank(0), 4)


def test_ood_score_examples(tri_bank):
    v = np.array([0.3, -1.2, 2.0])
    same = np.tile(v, (4, 1))
    assert ood_score(v, same, 4) == pytest.approx(0.0, abs=1e-12)
    # oracle: similarities 1.0, 0.6, 0.0 -> top-2 mean 0.8 -> 0.2
    expected = oracles.score([1.0, 0.0], [[1.0, 0.0], [0.6, 0.8], [0.0, 1.0]], 2, "cosine")
    assert expected == pytest.approx(0.2, abs=1e-12)
    assert ood_score((1.0, 0.0), tri_bank.bank(0), 2) == pytest.approx(expected, abs=1e-7)
    ortho = [[0.0, 1.0, 0.0], [0.0, 0.0, 2.0], [0.0, -3.0, 1.0]]
    assert ood_score((5.0, 0.0, 0.0), ortho, 3) == pytest.approx(1.0, abs=1e-12)


def test_ood_score_underfilled_bank():
    bs = FeatureBankSet(1, 10, 2)
    bs.push(0, (1.0, 0.0))
    with pytest.raises(SizeError):
        ood_score((1.0, 0.0), bs.bank(0), 5)


def test_prototype_scores_examples(tri_bank):
    v = np.array([1.0, 2.0])
    assert prototype_scores(np.tile(v, (3, 1)), 1) == pytest.approx([0.0, 0.0, 0.0], abs=1e-12)
    assert prototype_scores([[1.0, 0.0], [0.0, 1.0]], 1) == pytest.approx([1.0, 1.0], abs=1e-12)
    bank = [[1.0, 0.0], [0.6, 0.8], [0.0, 1.0]]
    expected = oracles.loo_scores(bank, 1, "cosine")
    assert expected == pytest.approx([0.4, 0.2, 0.2], abs=1e-12)
    assert prototype_scores(tri_bank.bank(0), 1) == pytest.approx(expected, abs=1e-7)


def test_prototype_scores_needs_k_plus_one(tri_bank):
    with pytest.raises(SizeError):
        prototype_scores(tri_bank.bank(0), 3)


@pytest.mark.parametrize("metric", ["cosine", "l1", "l2"])
def test_oracle_equivalence_random(metric, rng):
    for _ in range(50):
        n = int(rng.integers(1, 65))
        d = int(rng.integers(1, 9))
        bank = rng.standard_normal((n, d)).astype(np.float32)
        q = rng.standard_normal(d).astype(np.float32)
        k = int(rng.integers(1, n + 1))
        got = ood_score(q, bank, k, metric)
        want = oracles.score(q.tolist(), bank.tolist(), k, metric)
        assert got == pytest.approx(want, rel=1e-6, abs=1e-12)
        if n > k:
            got = prototype_scores(bank, k, metric)
            want = oracles.loo_scores(bank.tolist(), k, metric)
            assert got == pytest.approx(want, rel=1e-6, abs=1e-12)


finite = st.floats(-100, 100, allow_nan=False, width=32).filter(lambda x: abs(x) > 1e-3)


@settings(max_examples=50, deadline=None)
@given(
    bank=arrays(np.float32, st.tuples(st.integers(2, 20), st.just(4)), elements=finite),
    query=arrays(np.float32, 4, elements=finite),
    lam=st.floats(1e-3, 1e3),
    k=st.integers(1, 5),
)
def test_cosine_properties(bank, query, lam, k):
    k = min(k, len(bank))
    g = ood_score(query, bank, k)
    assert -1e-9 <= g <= 2 + 1e-9
    assert ood_score(query.astype(np.float64) * lam, bank, k) == pytest.approx(g, abs=1e-12)
    perm = np.random.default_rng(0).permutation(len(bank))
    assert ood_score(query, bank[perm], k) == pytest.approx(g, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(
    bank=arrays(np.float32, st.tuples(st.integers(3, 20), st.just(3)), elements=finite),
    query=arrays(np.float32, 3, elements=finite),
    metric=st.sampled_from(["cosine", "l1", "l2"]),
)
def test_appending_closer_prototype_never_increases_score(bank, query, metric):
    k = 2
    before = ood_score(query, bank, k, metric)
    kth = np.sort(pairwise(query, bank, metric)[0])[k - 1]
    closer = query.astype(np.float64) * 1.0  # distance 0 (or cosine 0) to the query
    if not pairwise(query, closer, metric)[0, 0] < kth:
        return
    after = ood_score(query, np.vstack([bank, closer]), k, metric)
    assert after <= before + 1e-12


def test_l1_l2_nonnegative_and_zero_iff_equal(rng):
    a = rng.standard_normal(5)
    for metric in ("l1", "l2"):
        assert pairwise(a, a, metric)[0, 0] == 0.0
        assert pairwise(a, a + 1e-3, metric)[0, 0] > 0


def test_batch_matches_single_and_is_worker_independent(rng):
    bank = rng.standard_normal((100, 16)).astype(np.float32)
    q = rng.standard_normal((700, 16)).astype(np.float32)
    for metric in ("cosine", "l1", "l2"):
        serial = ood_scores(q, bank, 5, metric)
        parallel = ood_scores(q, bank, 5, metric, n_jobs=4, chunk_size=37)
        single = np.array([ood_score(x, bank, 5, metric) for x in q[:50]])
        assert np.array_equal(serial, parallel)
        assert np.array_equal(serial[:50], single)


def test_scores_do_not_mutate_bank(tri_bank):
    before = tri_bank.bank(0).as_array().copy()
    ood_score((1.0, 0.0), tri_bank.bank(0), 2)
    prototype_scores(tri_bank.bank(0), 1)
    assert np.array_equal(before, tri_bank.bank(0).as_array())


def test_unknown_metric():
    with pytest.raises(ConfigurationError):
        ood_score((1.0, 0.0), [[1.0, 0.0]], 1, "mahalanobis")
