"""k-nearest-neighbor OOD scores against a class bank.

For the cosine metric the score of a query ``f`` against bank ``M_c`` is::

    gamma = 1 - mean(cos(f, M_c[k]) for k in the K nearest prototypes)

For ``l1`` and ``l2`` the score is the mean of the K smallest distances.
Higher always means more out-of-distribution.

The pairwise kernel accumulates one feature coordinate at a time, so each
score depends only on its own query row. Results are therefore bit-identical
whether queries are scored one by one, in one batch or split across workers.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .bank import ClassFeatureBank
from .exceptions import ConfigurationError, SizeError, ValidationError

METRICS = ("cosine", "l1", "l2")


def check_metric(metric: str) -> str:
    if metric not in METRICS:
        raise ConfigurationError(f"metric must be one of {METRICS}, got {metric!r}")
    return metric


def k_from_ratio(capacity: int, ratio: float) -> int:
    """Resolve ``K = max(1, floor(ratio * capacity))``."""
    if capacity < 1:
        raise ConfigurationError(f"capacity must be >= 1, got {capacity}")
    if not (0.0 < ratio <= 1.0) or math.isnan(ratio):
        raise ConfigurationError(f"knn ratio must lie in (0, 1], got {ratio}")
    # the epsilon keeps e.g. 0.05 * 100 = 5.000000000000001 or 4.999... from drifting
    return max(1, int(math.floor(ratio * capacity + 1e-9)))


def _as_matrix(x, name="features") -> np.ndarray:
    arr = np.asarray(x.as_array() if isinstance(x, ClassFeatureBank) else x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ValidationError(f"{name} must be 2-D")
    return arr


def _norms(x: np.ndarray) -> np.ndarray:
    acc = np.zeros(x.shape[0])
    for d in range(x.shape[1]):
        acc += x[:, d] * x[:, d]
    return np.sqrt(acc)


def pairwise(queries, prototypes, metric: str = "cosine") -> np.ndarray:
    """Dissimilarity matrix ``(n_queries, n_prototypes)``.

    Cosine entries are ``1 - cos``; l1/l2 entries are plain distances.
    """
    q = _as_matrix(queries, "queries")
    b = _as_matrix(prototypes, "prototypes")
    if q.shape[1] != b.shape[1]:
        raise ValidationError(f"dimension mismatch: {q.shape[1]} vs {b.shape[1]}")
    return _pairwise(q, b, check_metric(metric))


def _pairwise(q, b, metric):
    acc = np.zeros((q.shape[0], b.shape[0]))
    if metric == "cosine":
        for d in range(q.shape[1]):
            acc += np.multiply.outer(q[:, d], b[:, d])
        qn, bn = _norms(q), _norms(b)
        if np.any(qn == 0) or np.any(bn == 0):
            raise ValidationError("cosine distance undefined for zero-norm vectors")
        return 1.0 - acc / np.multiply.outer(qn, bn)
    if metric == "l1":
        for d in range(q.shape[1]):
            acc += np.abs(np.subtract.outer(q[:, d], b[:, d]))
        return acc
    for d in range(q.shape[1]):
        diff = np.subtract.outer(q[:, d], b[:, d])
        acc += diff * diff
    return np.sqrt(acc)


def cosine_distance(a, b) -> float:
    """``1 - a.b / (|a| |b|)``, in ``[0, 2]`` up to rounding."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 1 or a.shape != b.shape:
        raise ValidationError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(pairwise(a, b, "cosine")[0, 0])


def _select(dist_row: np.ndarray, k: int) -> np.ndarray:
    # stable sort: among equal distances the older (lower) index wins
    return np.argsort(dist_row, kind="stable")[:k]


def _check_k(k, n):
    if k < 1:
        raise ConfigurationError(f"K must be >= 1, got {k}")
    if n < k:
        raise SizeError(f"bank holds {n} prototypes, fewer than K={k} (warm-up incomplete)")


def knn_indices(query, bank, k: int, metric: str = "cosine") -> np.ndarray:
    """Bank indices of the ``k`` nearest prototypes, nearest first."""
    b = _as_matrix(bank, "bank")
    _check_k(k, b.shape[0])
    d = pairwise(query, b, metric)[0]
    return _select(d, k)


def _score_rows(dist: np.ndarray, k: int, metric: str) -> np.ndarray:
    idx = np.argsort(dist, axis=1, kind="stable")[:, :k]
    nearest = np.take_along_axis(dist, idx, axis=1)
    if metric == "cosine":
        # 1 - mean similarity, written out as in the score definition
        sims = 1.0 - nearest
        total = np.zeros(dist.shape[0])
        for j in range(k):
            total += sims[:, j]
        return 1.0 - total / k
    total = np.zeros(dist.shape[0])
    for j in range(k):
        total += nearest[:, j]
    return total / k


def ood_score(query, bank, k: int, metric: str = "cosine") -> float:
    """OOD score of a single query against one class bank."""
    return float(ood_scores(np.asarray(query)[None, :], bank, k, metric)[0])


def ood_scores(queries, bank, k: int, metric: str = "cosine", n_jobs: int = 1, chunk_size: int = 256) -> np.ndarray:
    """Score many queries against the same bank.

    With ``n_jobs > 1`` the queries are split into chunks scored in a thread
    pool; results are gathered in input order and are bit-identical to the
    serial path.
    """
    b = _as_matrix(bank, "bank")
    q = _as_matrix(queries, "queries")
    metric = check_metric(metric)
    _check_k(k, b.shape[0])
    if q.shape[0] == 0:
        return np.zeros(0)
    if q.shape[1] != b.shape[1]:
        raise ValidationError(f"dimension mismatch: {q.shape[1]} vs {b.shape[1]}")

    def work(chunk):
        return _score_rows(_pairwise(chunk, b, metric), k, metric)

    chunks = [q[i:i + chunk_size] for i in range(0, q.shape[0], chunk_size)]
    if n_jobs > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            parts = list(pool.map(work, chunks))
    else:
        parts = [work(c) for c in chunks]
    return np.concatenate(parts)


def prototype_scores(bank, k: int, metric: str = "cosine") -> np.ndarray:
    """Leave-one-out score of every prototype against the remaining ones."""
    b = _as_matrix(bank, "bank")
    metric = check_metric(metric)
    if k < 1:
        raise ConfigurationError(f"K must be >= 1, got {k}")
    if b.shape[0] <= k:
        raise SizeError(f"prototype scoring needs more than K={k} prototypes, bank holds {b.shape[0]}")
    dist = _pairwise(b, b, metric)
    np.fill_diagonal(dist, np.inf)
    return _score_rows(dist, k, metric)
