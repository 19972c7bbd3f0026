"""Filter-quality metrics computed from evaluation-only ground truth.

Convention: the positive class is "OOD rejected". Rates whose denominator is
zero are reported as ``None`` rather than 0 or 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .exceptions import JoinError, SizeError


def _ratio(num, den):
    return num / den if den else None


@dataclass(frozen=True)
class FilterConfusion:
    tp: int = 0  # OOD rejected
    fp: int = 0  # ID rejected
    tn: int = 0  # ID kept
    fn: int = 0  # OOD kept
    unknown: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def precision(self):
        return _ratio(self.tp, self.tp + self.fp)

    @property
    def recall(self):
        return _ratio(self.tp, self.tp + self.fn)

    @property
    def f1(self):
        return _ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn)

    @property
    def id_retention(self):
        return _ratio(self.tn, self.tn + self.fp)

    @property
    def ood_leakage(self):
        return _ratio(self.fn, self.tp + self.fn)

    def __add__(self, other: "FilterConfusion") -> "FilterConfusion":
        return FilterConfusion(
            self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn,
            self.unknown + other.unknown,
        )

    def to_dict(self) -> dict:
        return {
            "tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn, "unknown": self.unknown,
            "precision": self.precision, "recall": self.recall, "f1": self.f1,
            "id_retention": self.id_retention, "ood_leakage": self.ood_leakage,
        }


def _gt_lookup(decisions, gt):
    if isinstance(gt, Mapping):
        try:
            return [gt[d.record_id] for d in decisions]
        except KeyError as exc:
            raise JoinError(f"no ground truth for record {exc.args[0]!r}") from None
    gt = list(gt)
    if len(gt) != len(decisions):
        raise JoinError(f"{len(decisions)} decisions but {len(gt)} ground-truth flags")
    return gt


def filter_confusion(decisions: Sequence, gt) -> FilterConfusion:
    """Count filter outcomes.

    ``gt`` is either a mapping ``record_id -> flag`` or a sequence aligned
    with ``decisions``; flags are ``'id'``, ``'ood'`` or ``'unknown'``.
    Unknown records are excluded and counted separately.
    """
    flags = _gt_lookup(decisions, gt)
    tp = fp = tn = fn = unknown = 0
    for d, flag in zip(decisions, flags):
        if flag == "ood":
            if d.kept:
                fn += 1
            else:
                tp += 1
        elif flag == "id":
            if d.kept:
                tn += 1
            else:
                fp += 1
        elif flag == "unknown":
            unknown += 1
        else:
            raise JoinError(f"bad ground-truth flag {flag!r} for {d.record_id!r}")
    return FilterConfusion(tp, fp, tn, fn, unknown)


def auroc(scores, gt_ood) -> float:
    """Mann-Whitney AUROC: P(OOD score > ID score), ties count one half.

    ``gt_ood`` holds booleans (True = OOD) or ``'id'``/``'ood'`` flags;
    ``'unknown'`` entries are dropped.
    """
    s = np.asarray(scores, dtype=np.float64)
    labels = list(gt_ood)
    if len(labels) != s.shape[0]:
        raise JoinError("scores and labels differ in length")
    is_ood = np.array([lab is True or lab == "ood" or lab == 1 for lab in labels])
    known = np.array([not (lab == "unknown" or lab == -1) for lab in labels], dtype=bool)
    s, is_ood = s[known], is_ood[known]
    pos, neg = s[is_ood], s[~is_ood]
    if pos.size == 0 or neg.size == 0:
        raise SizeError("AUROC needs at least one ID and one OOD sample")
    neg_sorted = np.sort(neg)
    below = np.searchsorted(neg_sorted, pos, side="left")
    ties = np.searchsorted(neg_sorted, pos, side="right") - below
    u = below.sum() + 0.5 * ties.sum()
    return float(u / (pos.size * neg.size))


def pseudo_purity(decisions: Sequence, gt_ood, gt_class, pred_class):
    """Fraction of kept pseudo-labels that are ID and correctly classified.

    All three ground-truth arguments are mappings keyed by record id.
    Returns ``None`` when nothing was kept.
    """
    kept = [d.record_id for d in decisions if d.kept]
    if not kept:
        return None
    good = 0
    for rid in kept:
        try:
            if gt_ood[rid] == "id" and gt_class[rid] == pred_class[rid]:
                good += 1
        except KeyError:
            raise JoinError(f"no ground truth for record {rid!r}") from None
    return good / len(kept)
