"""Desk-scale teacher-student self-training with a surrogate detector.

The generator draws isotropic Gaussian clusters: one per ID class and one per
OOD class. Each OOD cluster sits at ``ood_separation`` from an anchor ID
cluster. Its offset is orthogonal to every other centroid, tilted toward the
next ID class by ``ood_bridge`` (0 = no tilt), and no ID centroid is closer
than ``ood_separation``. With ``drift_rate > 0`` every
centroid moves along a fixed random direction by that many within-cluster
standard deviations per epoch.

The detector is a nearest-centroid Gaussian classifier whose logits are
``-temperature * ||x - centroid||^2``. The student pulls each centroid toward
the mean of its labeled and pseudo-labeled features; the teacher follows the
student by exponential moving average.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .bank import FLOAT, FeatureBankSet
from .exceptions import ConfigurationError, ValidationError
from .filtering import FilterDecision, PseudoPrediction, baseline_filter, filter_predictions
from .metrics import FilterConfusion, filter_confusion
from .scoring import check_metric, k_from_ratio
from .threshold import BetaSchedule, ThresholdPolicy, ThresholdTracker

ROLES = ("labeled", "unlabeled", "test", "stream")


@dataclass(frozen=True)
class StreamConfig:
    """Synthetic stream parameters.

    Distances are in units of the base within-cluster standard deviation.
    Counts: ``n_labeled`` labeled samples per class for burn-in,
    ``n_labeled_stream`` labeled samples per epoch (all classes) for mutual
    learning, ``n_unlabeled`` unlabeled samples per epoch, ``n_test`` test
    samples per class per epoch.
    """

    num_id_classes: int = 5
    num_ood_classes: int = 1
    dimension: int = 16
    cluster_separation: float = 6.0
    ood_separation: float | None = None
    ood_bridge: float = 0.0
    drift_rate: float = 0.0
    contamination: float = 0.0
    spread_min: float = 1.0
    spread_max: float = 1.0
    n_labeled: int = 120
    n_labeled_stream: int = 100
    n_unlabeled: int = 400
    n_test: int = 100
    epochs: int = 6
    seed: int = 0

    def __post_init__(self):
        if self.num_id_classes < 1 or self.num_ood_classes < 0 or self.dimension < 1:
            raise ConfigurationError("need num_id_classes >= 1, num_ood_classes >= 0, dimension >= 1")
        if not 0.0 <= self.contamination <= 1.0:
            raise ConfigurationError(f"contamination must lie in [0, 1], got {self.contamination}")
        if self.contamination > 0 and self.num_ood_classes == 0:
            raise ConfigurationError("contamination > 0 needs at least one OOD class")
        for name in ("n_labeled", "n_labeled_stream", "n_unlabeled", "n_test", "epochs"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")
        if self.cluster_separation <= 0 or (self.ood_separation is not None and self.ood_separation <= 0):
            raise ConfigurationError("separations must be positive")
        if not 0.0 <= self.ood_bridge < 1.0:
            raise ConfigurationError(f"ood_bridge must lie in [0, 1), got {self.ood_bridge}")
        if self.drift_rate < 0:
            raise ConfigurationError("drift_rate must be >= 0")
        if not 0 < self.spread_min <= self.spread_max:
            raise ConfigurationError("need 0 < spread_min <= spread_max")

    @property
    def ood_sep(self) -> float:
        return self.cluster_separation if self.ood_separation is None else self.ood_separation


@dataclass
class Stream:
    """Generated records as parallel arrays.

    ``class_id`` is the true ID class or -1 for OOD records; ``ood_class``
    is the OOD cluster index or -1. Epoch 0 is the burn-in distribution.
    """

    config: StreamConfig
    record_ids: list
    roles: np.ndarray
    epochs: np.ndarray
    class_id: np.ndarray
    ood_class: np.ndarray
    features: np.ndarray
    centroids: np.ndarray = field(repr=False)  # (E+1, C+O, D)

    def __len__(self):
        return len(self.record_ids)

    def select(self, role: str, epoch: int | None = None) -> np.ndarray:
        mask = self.roles == role
        if epoch is not None:
            mask &= self.epochs == epoch
        return np.flatnonzero(mask)

    @property
    def gt_ood(self) -> np.ndarray:
        return self.class_id < 0


def _centroids(cfg: StreamConfig, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    C, O, D = cfg.num_id_classes, cfg.num_ood_classes, cfg.dimension
    if C + O > D:
        raise ConfigurationError(
            f"cannot place {C} ID and {O} OOD centroids at the requested separations in {D} dimensions "
            f"(needs dimension >= {C + O})"
        )
    # random orthonormal frame; ID centroids form a regular simplex with edge = separation
    q, r = np.linalg.qr(rng.standard_normal((D, D)))
    q = q * np.sign(np.diag(r))
    radius = cfg.cluster_separation / math.sqrt(2.0)
    cents = np.zeros((C + O, D))
    for i in range(C):
        cents[i] = radius * q[:, i]
    b = cfg.ood_bridge
    for j in range(O):
        anchor = j % C
        direction = math.sqrt(1.0 - b * b) * q[:, C + j]
        if C > 1 and b > 0:
            toward = cents[(anchor + 1) % C] - cents[anchor]
            direction = direction + b * toward / np.linalg.norm(toward)
        cents[C + j] = cents[anchor] + cfg.ood_sep * direction
    for j in range(O):
        gap = np.linalg.norm(cents[:C] - cents[C + j], axis=1).min()
        if gap < cfg.ood_sep * (1.0 - 1e-9):
            raise ConfigurationError(
                f"OOD cluster {j} would lie {gap:.3g} from an ID centroid, closer than ood_separation; "
                "lower ood_bridge"
            )
    drift_dirs = rng.standard_normal((C + O, D))
    drift_dirs /= np.linalg.norm(drift_dirs, axis=1, keepdims=True)
    return cents, drift_dirs


def gen_stream(cfg: StreamConfig) -> Stream:
    """Generate a deterministic stream for ``cfg`` (seeded by ``cfg.seed``)."""
    rng = np.random.default_rng(cfg.seed)
    C, O, D = cfg.num_id_classes, cfg.num_ood_classes, cfg.dimension
    base, drift_dirs = _centroids(cfg, rng)
    E = cfg.epochs
    cents = np.stack([base + e * cfg.drift_rate * drift_dirs for e in range(E + 1)])
    spreads = np.concatenate([np.linspace(cfg.spread_min, cfg.spread_max, C), np.ones(O)])

    ids, roles, epochs, cls, oodc, feats = [], [], [], [], [], []

    def emit(prefix, role, epoch, classes, ood_idx):
        n = len(classes)
        noise = rng.standard_normal((n, D))
        which = np.where(ood_idx >= 0, C + ood_idx, classes)
        x = cents[epoch][which] + noise * spreads[which][:, None]
        ids.extend(f"{prefix}{epoch}-{i:05d}" for i in range(n))
        roles.extend([role] * n)
        epochs.extend([epoch] * n)
        cls.extend(np.where(ood_idx >= 0, -1, classes).tolist())
        oodc.extend(ood_idx.tolist())
        feats.append(x)

    labeled = np.repeat(np.arange(C), cfg.n_labeled)
    emit("L", "labeled", 0, labeled, np.full(labeled.shape, -1))
    for e in range(E + 1):
        test = np.repeat(np.arange(C), cfg.n_test)
        emit("T", "test", e, test, np.full(test.shape, -1))
    for e in range(1, E + 1):
        ls = rng.integers(0, C, cfg.n_labeled_stream)
        emit("S", "stream", e, ls, np.full(ls.shape, -1))
        n_ood = int(round(cfg.contamination * cfg.n_unlabeled))
        is_ood = np.zeros(cfg.n_unlabeled, dtype=bool)
        is_ood[:n_ood] = True
        rng.shuffle(is_ood)
        classes = rng.integers(0, C, cfg.n_unlabeled)
        ood_idx = np.where(is_ood, rng.integers(0, max(O, 1), cfg.n_unlabeled), -1)
        emit("U", "unlabeled", e, classes, ood_idx)

    features = np.concatenate(feats).astype(FLOAT) if feats else np.zeros((0, D), FLOAT)
    return Stream(
        cfg, ids, np.array(roles), np.array(epochs, dtype=int), np.array(cls, dtype=int),
        np.array(oodc, dtype=int), features, cents,
    )


class SurrogateDetector:
    """Nearest-centroid Gaussian classifier standing in for a detector."""

    def __init__(self, centroids, temperature: float = 0.5):
        self.centroids = np.array(centroids, dtype=np.float64)
        if self.centroids.ndim != 2 or not np.all(np.isfinite(self.centroids)):
            raise ValidationError("centroids must be a finite (C, D) array")
        if temperature < 0:
            raise ConfigurationError("temperature must be >= 0")
        self.temperature = float(temperature)

    @property
    def num_classes(self) -> int:
        return self.centroids.shape[0]

    @property
    def dimension(self) -> int:
        return self.centroids.shape[1]

    def copy(self) -> "SurrogateDetector":
        return SurrogateDetector(self.centroids.copy(), self.temperature)

    def logits(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.dimension:
            raise ValidationError(f"feature dimension {X.shape[1]} != detector dimension {self.dimension}")
        sq = np.zeros((X.shape[0], self.num_classes))
        for d in range(self.dimension):
            diff = np.subtract.outer(X[:, d], self.centroids[:, d])
            sq += diff * diff
        return -self.temperature * sq

    def predict_batch(self, X):
        """Return ``(pred_class, confidence, logits)`` arrays for rows of ``X``."""
        z = self.logits(X)
        pred = np.argmax(z, axis=1)  # first maximum, i.e. lowest class index on ties
        m = z.max(axis=1, keepdims=True)
        e = np.exp(z - m)
        conf = 1.0 / e.sum(axis=1)  # exp(max - max) / sum
        return pred, conf, z

    def accuracy(self, X, y) -> float:
        if len(y) == 0:
            return float("nan")
        pred, _, _ = self.predict_batch(X)
        return float(np.mean(pred == np.asarray(y)))


def predict(detector: SurrogateDetector, feature):
    pred, conf, z = detector.predict_batch(np.asarray(feature)[None, :])
    return int(pred[0]), float(conf[0]), z[0]


@dataclass
class SimState:
    teacher: SurrogateDetector
    student: SurrogateDetector
    bank_set: FeatureBankSet
    t: int = 0
    total_steps: int = 1
    ema_alpha: float = 0.999
    loss_weight: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.ema_alpha < 1.0:
            raise ConfigurationError(f"ema_alpha must lie in (0, 1), got {self.ema_alpha}")
        if self.teacher.centroids.shape != self.student.centroids.shape:
            raise ConfigurationError("teacher and student shapes differ")


def _class_means(X, y, num_classes):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=int)
    means = np.zeros((num_classes, X.shape[1] if X.ndim == 2 else 0))
    present = np.zeros(num_classes, dtype=bool)
    for c in range(num_classes):
        rows = X[y == c]
        if len(rows):
            means[c] = rows.mean(axis=0)
            present[c] = True
    return means, present


def student_update(state: SimState, labeled_batch, pseudo_batch, lr: float) -> None:
    """One step of the weighted centroid objective.

    For every class ``c``::

        delta_c = lr * (a_c * (mean_labeled_c - centroid_c)
                        + lambda * b_c * (mean_pseudo_c - centroid_c))

    where ``a_c``/``b_c`` are 1 when class ``c`` occurs in the labeled /
    pseudo batch and 0 otherwise. Batches are ``(features, classes)`` pairs;
    ``None`` or empty batches contribute nothing.
    """
    stu = state.student
    C = stu.num_classes
    delta = np.zeros_like(stu.centroids)
    for batch, weight in ((labeled_batch, 1.0), (pseudo_batch, state.loss_weight)):
        if batch is None or len(batch[1]) == 0:
            continue
        means, present = _class_means(batch[0], batch[1], C)
        delta[present] += weight * (means[present] - stu.centroids[present])
    stu.centroids = stu.centroids + lr * delta


def ema_update(state: SimState) -> None:
    # t + (1-a)(s-t) equals a*t + (1-a)*s and leaves t untouched when s == t
    tea = state.teacher.centroids
    state.teacher.centroids = tea + (1.0 - state.ema_alpha) * (state.student.centroids - tea)


def run_burn_in(state: SimState, X, y, epochs: int, lr: float = 0.5, batch_size: int = 32, rng=None) -> None:
    """Supervised training, teacher initialisation and bank warm-up.

    The student is trained on labeled data only, the teacher is then set to
    a copy of the student, and labeled features are pushed (in data order)
    into their class banks without eviction until every bank is full.
    """
    X = np.asarray(X)
    y = np.asarray(y, dtype=int)
    C = state.student.num_classes
    missing = sorted(set(range(C)) - set(y.tolist()))
    if missing:
        raise ValidationError(f"ID classes {missing} have no labeled data; their banks can never warm up")
    rng = rng if rng is not None else np.random.default_rng(0)
    for _ in range(epochs):
        order = rng.permutation(len(y))
        for s in range(0, len(order), batch_size):
            idx = order[s:s + batch_size]
            student_update(state, (X[idx], y[idx]), None, lr)
    state.teacher = state.student.copy()
    warm_up(state.bank_set, X, y)


def warm_up(bank_set: FeatureBankSet, X, y) -> int:
    """Fill banks without eviction; returns the number of features pushed."""
    pushed = 0
    for x, c in zip(X, y):
        if bank_set.is_warm():
            break
        bank = bank_set.bank(int(c))
        if not bank.is_full:
            bank.push(x)
            pushed += 1
    return pushed


@dataclass(frozen=True)
class FilterConfig:
    """How pseudo-labels are gated during mutual learning.

    ``mode`` is ``none`` (confidence gate only), ``cfb`` (feature bank gate),
    or one of the logit baselines ``msp``/``entropy``/``energy`` with
    ``baseline_cutoff``. ``bank_update`` is ``dynamic`` (FIFO pushes every
    iteration) or ``static`` (frozen once warm).
    """

    mode: str = "cfb"
    capacity: int = 100
    knn_ratio: float = 0.05
    metric: str = "cosine"
    threshold_kind: str = "adaptive"
    beta_init: float = 1.0
    beta_final: float = 2.0
    fixed_tau: float = 0.5
    conf_tau: float = 0.7
    bank_update: str = "dynamic"
    baseline_cutoff: float = 0.9
    n_jobs: int = 1

    def __post_init__(self):
        if self.mode not in ("none", "cfb", "msp", "entropy", "energy"):
            raise ConfigurationError(f"unknown filter mode {self.mode!r}")
        if self.bank_update not in ("dynamic", "static"):
            raise ConfigurationError(f"bank_update must be 'dynamic' or 'static', got {self.bank_update!r}")
        check_metric(self.metric)
        k_from_ratio(self.capacity, self.knn_ratio)
        if not 0.0 <= self.conf_tau <= 1.0:
            raise ConfigurationError(f"conf_tau must lie in [0, 1], got {self.conf_tau}")
        self.policy(1)

    @property
    def k(self) -> int:
        return k_from_ratio(self.capacity, self.knn_ratio)

    def policy(self, total_steps: int) -> ThresholdPolicy:
        if self.threshold_kind == "fixed":
            return ThresholdPolicy.fixed(self.fixed_tau, self.metric)
        if self.threshold_kind != "adaptive":
            raise ConfigurationError(f"threshold kind must be 'adaptive' or 'fixed', got {self.threshold_kind!r}")
        mode = "fixed" if self.beta_init == self.beta_final else "linear"
        return ThresholdPolicy("adaptive", BetaSchedule(self.beta_init, self.beta_final, total_steps, mode))


@dataclass(frozen=True)
class TrainConfig:
    burn_in_epochs: int = 5
    burn_in_lr: float = 0.5
    lr: float = 0.2
    loss_weight: float = 1.0
    ema_alpha: float = 0.999
    temperature: float = 0.5
    batch_size: int = 32
    unlabeled_batch: int = 64

    def __post_init__(self):
        if not 0.0 < self.ema_alpha < 1.0:
            raise ConfigurationError(f"ema_alpha must lie in (0, 1), got {self.ema_alpha}")
        if self.burn_in_epochs < 0 or self.batch_size < 1 or self.unlabeled_batch < 1:
            raise ConfigurationError("burn_in_epochs >= 0, batch_size >= 1 and unlabeled_batch >= 1 required")
        if self.temperature < 0 or self.loss_weight < 0:
            raise ConfigurationError("temperature and loss_weight must be >= 0")


def _round(x):
    return None if x is None else float(x)


def run_mutual_learning(state: SimState, stream: Stream, fcfg: FilterConfig, tcfg: TrainConfig, rng, on_iteration=None):
    """Teacher-student loop over epochs ``1..E`` of ``stream``.

    Per iteration: teacher predicts on an unlabeled batch, the filter gates
    the predictions, the student is updated with a labeled batch plus the
    kept pseudo-labels, the teacher follows by EMA and fresh labeled
    features are pushed into the banks. Returns one metrics dict per epoch.
    """
    cfg = stream.config
    E = cfg.epochs
    iters = max(1, math.ceil(cfg.n_unlabeled / tcfg.unlabeled_batch)) if cfg.n_unlabeled else 1
    state.total_steps = T = E * iters
    policy = fcfg.policy(T) if fcfg.mode == "cfb" else None
    tracker = ThresholdTracker(fcfg.k, fcfg.metric)
    history = []
    for e in range(1, E + 1):
        u_idx = stream.select("unlabeled", e)
        u_idx = u_idx[rng.permutation(len(u_idx))]
        s_idx = stream.select("stream", e)
        s_idx = s_idx[rng.permutation(len(s_idx))]
        u_batches = np.array_split(u_idx, iters)
        s_batches = np.array_split(s_idx, iters)
        conf_total = FilterConfusion()
        n_cand = n_kept = n_good = ood_accepted = 0
        gated_iters = 0
        for ub, sb in zip(u_batches, s_batches):
            decisions, preds = _gate(state, stream, ub, fcfg, policy, tracker)
            if any(d.ood_score is not None and d.reject_reason != "low_confidence" for d in decisions) \
                    and fcfg.mode == "cfb":
                gated_iters += 1
            if on_iteration is not None:
                on_iteration(state.t, decisions, state.bank_set)
            kept = [i for i, d in enumerate(decisions) if d.kept]
            gt = ["ood" if stream.class_id[i] < 0 else "id" for i in ub]
            conf_total = conf_total + filter_confusion(decisions, gt)
            n_cand += len(decisions)
            n_kept += len(kept)
            for i in kept:
                r = ub[i]
                if stream.class_id[r] < 0:
                    ood_accepted += 1
                elif stream.class_id[r] == preds[i].pred_class:
                    n_good += 1
            pseudo = None
            if kept:
                pseudo = (stream.features[ub[kept]], np.array([preds[i].pred_class for i in kept]))
            labeled = (stream.features[sb], stream.class_id[sb]) if len(sb) else None
            student_update(state, labeled, pseudo, tcfg.lr)
            ema_update(state)
            if len(sb):
                if not state.bank_set.is_warm():
                    # still warming up: fill without eviction, whatever the update mode
                    warm_up(state.bank_set, stream.features[sb], stream.class_id[sb])
                elif fcfg.bank_update == "dynamic":
                    state.bank_set.push_many(stream.class_id[sb], stream.features[sb])
            state.t += 1
        test = stream.select("test", e)
        rec = {
            "epoch": e,
            "step": state.t,
            "progress": state.t / T,
            "teacher_accuracy": state.teacher.accuracy(stream.features[test], stream.class_id[test]),
            "student_accuracy": state.student.accuracy(stream.features[test], stream.class_id[test]),
            "n_candidates": n_cand,
            "n_kept": n_kept,
            "ood_accepted": ood_accepted,
            "n_correct": n_good,
            "pseudo_purity": n_good / n_kept if n_kept else None,
            "gated_iterations": gated_iters,
            "warm": state.bank_set.is_warm(),
        }
        rec.update({k: _round(v) for k, v in conf_total.to_dict().items()})
        if policy is not None and state.bank_set.is_warm():
            rows = tracker.records(state.bank_set, policy, state.t)
            rec["beta"] = policy.beta(state.t)
            rec["thresholds"] = [{k: r[k] for k in ("class_id", "mu", "sigma", "tau")} for r in rows]
        history.append(rec)
    return history


def _gate(state, stream, ub, fcfg, policy, tracker):
    if len(ub) == 0:
        return [], []
    X = stream.features[ub]
    pred, conf, z = state.teacher.predict_batch(X)
    preds = [
        PseudoPrediction(stream.record_ids[r], X[j], int(pred[j]), min(1.0, float(conf[j])), z[j])
        for j, r in enumerate(ub)
    ]
    if fcfg.mode == "none":
        decisions = [
            FilterDecision(p.record_id, True) if p.confidence >= fcfg.conf_tau
            else FilterDecision(p.record_id, False, "low_confidence")
            for p in preds
        ]
    elif fcfg.mode == "cfb":
        decisions = filter_predictions(
            preds, state.bank_set, fcfg.k, fcfg.metric, policy, fcfg.conf_tau, state.t,
            tracker=tracker, n_jobs=fcfg.n_jobs,
        )
    else:
        decisions = baseline_filter(preds, fcfg.mode, fcfg.baseline_cutoff, conf_tau=fcfg.conf_tau)
    return decisions, preds


def simulate(stream_cfg: StreamConfig, fcfg: FilterConfig, tcfg: TrainConfig, seed: int | None = None):
    """Full run: generate, burn in, warm up, mutual learning.

    Returns ``(burn_in_record, history, state)``.
    """
    stream = gen_stream(stream_cfg)
    rng = np.random.default_rng([stream_cfg.seed if seed is None else seed, 1])
    C, D = stream_cfg.num_id_classes, stream_cfg.dimension
    init = SurrogateDetector(np.zeros((C, D)), tcfg.temperature)
    state = SimState(
        teacher=init.copy(), student=init.copy(),
        bank_set=FeatureBankSet(C, fcfg.capacity, D),
        ema_alpha=tcfg.ema_alpha, loss_weight=tcfg.loss_weight,
    )
    lab = stream.select("labeled", 0)
    run_burn_in(state, stream.features[lab], stream.class_id[lab], tcfg.burn_in_epochs,
                lr=tcfg.burn_in_lr, batch_size=tcfg.batch_size, rng=rng)
    test0 = stream.select("test", 0)
    burn = {
        "teacher_accuracy": state.teacher.accuracy(stream.features[test0], stream.class_id[test0]),
        "bank_warm": state.bank_set.is_warm(),
        "cold_classes": state.bank_set.cold_classes(),
    }
    history = run_mutual_learning(state, stream, fcfg, tcfg, rng)
    return burn, history, state


def config_dict(*cfgs) -> dict:
    out = {}
    for c in cfgs:
        out.update(asdict(c))
    return out
