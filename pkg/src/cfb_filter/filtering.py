"""Two-stage pseudo-label gate and logit-based baseline scorers.

A candidate pseudo-label is first checked against the confidence threshold,
then its feature is scored against the bank of its predicted class and
compared with that class's OOD threshold. A score equal to the threshold is
kept.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .bank import FeatureBankSet, as_feature
from .exceptions import ConfigurationError, SizeError, ValidationError
from .scoring import ood_scores
from .threshold import ThresholdPolicy, ThresholdTracker

REJECT_REASONS = ("none", "low_confidence", "ood", "cold_bank")
GT_FLAGS = ("id", "ood", "unknown")


@dataclass
class PseudoPrediction:
    """A teacher prediction on an unlabeled object.

    ``gt_ood`` and ``gt_class`` are evaluation-only and never read by the
    filters.
    """

    record_id: str
    feature: np.ndarray
    pred_class: int
    confidence: float
    logits: np.ndarray | None = None
    gt_ood: str = "unknown"
    gt_class: int | None = None

    def __post_init__(self):
        self.feature = as_feature(self.feature)
        self.confidence = float(self.confidence)
        if not 0.0 <= self.confidence <= 1.0:
            raise ValidationError(f"{self.record_id}: confidence {self.confidence} outside [0, 1]")
        if self.logits is not None:
            self.logits = np.asarray(self.logits, dtype=np.float64)
            if self.logits.ndim != 1 or not np.all(np.isfinite(self.logits)):
                raise ValidationError(f"{self.record_id}: logits must be a finite 1-D vector")
        if self.gt_ood not in GT_FLAGS:
            raise ValidationError(f"{self.record_id}: gt_ood must be one of {GT_FLAGS}")


@dataclass
class FilterDecision:
    record_id: str
    kept: bool
    reject_reason: str = "none"
    ood_score: float | None = None
    threshold_used: float | None = None
    beta: float | None = None
    warmup: bool = False

    def __post_init__(self):
        if self.reject_reason not in REJECT_REASONS:
            raise ValueError(f"unknown reject reason {self.reject_reason!r}")
        if self.kept != (self.reject_reason == "none"):
            raise ValueError("kept must be true exactly when reject_reason is 'none'")

    def to_dict(self) -> dict:
        return {
            "record_id": self.record_id,
            "kept": self.kept,
            "reject_reason": self.reject_reason,
            "ood_score": self.ood_score,
            "threshold_used": self.threshold_used,
            "beta": self.beta,
            "warmup": self.warmup,
        }


def decisions_to_jsonl(decisions: Sequence[FilterDecision]) -> str:
    # json uses repr() for floats, which round-trips float64 exactly
    return "".join(json.dumps(d.to_dict(), allow_nan=False) + "\n" for d in decisions)


def filter_predictions(
    preds: Sequence[PseudoPrediction],
    bank_set: FeatureBankSet,
    k: int,
    metric: str,
    policy: ThresholdPolicy,
    conf_tau: float = 0.7,
    t=0,
    *,
    tracker: ThresholdTracker | None = None,
    on_cold: str = "bypass",
    n_jobs: int = 1,
) -> list[FilterDecision]:
    """Gate pseudo-predictions by confidence, then by per-class OOD threshold.

    While any bank is below capacity the OOD gate is inactive: with
    ``on_cold='bypass'`` confidence-passers are kept and flagged
    ``warmup=True``; with ``on_cold='reject'`` they are rejected as
    ``cold_bank``.

    Decisions are returned in input order.
    """
    if not 0.0 <= conf_tau <= 1.0:
        raise ConfigurationError(f"conf_tau must lie in [0, 1], got {conf_tau}")
    if on_cold not in ("bypass", "reject"):
        raise ConfigurationError(f"on_cold must be 'bypass' or 'reject', got {on_cold!r}")
    declared = set(bank_set.class_ids)
    for p in preds:
        if p.pred_class not in declared:
            raise ValidationError(f"{p.record_id}: predicted class {p.pred_class} is not a declared ID class")
        if p.feature.shape[0] != bank_set.dimension:
            raise ValidationError(f"{p.record_id}: feature dimension {p.feature.shape[0]} != {bank_set.dimension}")

    beta = policy.beta(t)
    decisions: list[FilterDecision | None] = [None] * len(preds)
    gated: dict[int, list[int]] = {}
    for i, p in enumerate(preds):
        if p.confidence < conf_tau:
            decisions[i] = FilterDecision(p.record_id, False, "low_confidence", beta=beta)
        else:
            gated.setdefault(p.pred_class, []).append(i)

    if not bank_set.is_warm():
        for idxs in gated.values():
            for i in idxs:
                rid = preds[i].record_id
                if on_cold == "bypass":
                    decisions[i] = FilterDecision(rid, True, beta=beta, warmup=True)
                else:
                    decisions[i] = FilterDecision(rid, False, "cold_bank", beta=beta, warmup=True)
        return decisions

    if tracker is None:
        tracker = ThresholdTracker(k, metric)
    taus = tracker.thresholds(bank_set, policy, t)
    for c, idxs in gated.items():
        feats = np.stack([preds[i].feature for i in idxs])
        scores = ood_scores(feats, bank_set.bank(c), k, metric, n_jobs=n_jobs)
        tau = taus[c]
        for i, g in zip(idxs, scores):
            g = float(g)
            keep = g <= tau
            decisions[i] = FilterDecision(
                preds[i].record_id, keep, "none" if keep else "ood", g, tau, beta
            )
    return decisions


def _check_logits(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1 or z.size == 0:
        raise SizeError("logits must be a non-empty 1-D vector")
    if not np.all(np.isfinite(z)):
        raise ValidationError("logits must be finite")
    return z


def log_softmax(logits) -> np.ndarray:
    z = _check_logits(logits)
    m = z.max()
    return z - (m + math.log(np.exp(z - m).sum()))


def msp_score(logits) -> float:
    """Maximum softmax probability; higher means more in-distribution."""
    return float(np.exp(log_softmax(logits).max()))


def entropy_score(logits) -> float:
    """Shannon entropy of the softmax in nats; higher means more OOD."""
    logp = log_softmax(logits)
    p = np.exp(logp)
    return max(0.0, float(-(p * logp).sum()))


def energy_score(logits) -> float:
    """``-logsumexp(logits)``; higher means more OOD."""
    z = _check_logits(logits)
    m = z.max()
    return float(-(m + math.log(np.exp(z - m).sum())))


BASELINE_SCORERS = {
    "msp": (msp_score, "higher_is_id"),
    "entropy": (entropy_score, "higher_is_ood"),
    "energy": (energy_score, "higher_is_ood"),
}


def baseline_filter(
    preds: Sequence[PseudoPrediction],
    scorer: str,
    cutoff: float,
    conf_tau: float | None = None,
) -> list[FilterDecision]:
    """Keep predictions on the in-distribution side of ``cutoff``.

    ``msp`` keeps ``score >= cutoff``; ``entropy`` and ``energy`` keep
    ``score <= cutoff``. Rejections are reported with reason ``ood``. An
    optional ``conf_tau`` applies the usual confidence gate first.
    """
    if scorer not in BASELINE_SCORERS:
        raise ConfigurationError(f"scorer must be one of {sorted(BASELINE_SCORERS)}, got {scorer!r}")
    fn, polarity = BASELINE_SCORERS[scorer]
    missing = [p.record_id for p in preds if p.logits is None]
    if missing:
        raise ValidationError(f"baseline scorer {scorer!r} needs logits; missing on {missing[0]}")
    out = []
    for p in preds:
        if conf_tau is not None and p.confidence < conf_tau:
            out.append(FilterDecision(p.record_id, False, "low_confidence"))
            continue
        s = fn(p.logits)
        keep = s >= cutoff if polarity == "higher_is_id" else s <= cutoff
        out.append(FilterDecision(p.record_id, keep, "none" if keep else "ood", s, float(cutoff)))
    return out
