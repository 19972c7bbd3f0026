"""Per-class adaptive OOD thresholds.

The cut-off for class ``c`` is ``mu_c + beta * sigma_c`` where ``mu_c`` and
``sigma_c`` are the mean and population standard deviation of the
leave-one-out scores of the prototypes currently in that class bank.
``beta`` can follow a linear schedule over training progress.
"""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass

import numpy as np

from .bank import FeatureBankSet
from .exceptions import ConfigurationError, RangeError, SizeError, WarmupError
from .scoring import check_metric, prototype_scores


@dataclass(frozen=True)
class ClassStats:
    class_id: int | None
    mu: float
    sigma: float
    sample_count: int


def class_stats(scores, class_id=None) -> ClassStats:
    """Mean and population standard deviation of prototype scores."""
    arr = np.asarray(scores, dtype=np.float64).ravel()
    if arr.size == 0:
        raise SizeError("class_stats needs at least one score")
    if not np.all(np.isfinite(arr)):
        raise ConfigurationError("scores must be finite")
    values = arr.tolist()
    # statistics uses exact rational arithmetic: constant input gives sigma == 0.0
    return ClassStats(class_id, statistics.fmean(values) if len(set(values)) > 1 else values[0],
                      statistics.pstdev(values), len(values))


def threshold(stats: ClassStats, beta: float) -> float:
    return stats.mu + beta * stats.sigma


@dataclass(frozen=True)
class BetaSchedule:
    """Linear (or constant) ramp of ``beta`` over ``[0, total_steps]``.

    ``mode='fixed'`` returns ``beta_init`` at every step.
    """

    beta_init: float = 1.0
    beta_final: float = 2.0
    total_steps: int = 1
    mode: str = "linear"

    def __post_init__(self):
        if self.mode not in ("linear", "fixed"):
            raise ConfigurationError(f"schedule mode must be 'linear' or 'fixed', got {self.mode!r}")
        if self.total_steps < 1:
            raise ConfigurationError("total_steps must be >= 1")

    @classmethod
    def fixed(cls, beta: float, total_steps: int = 1) -> "BetaSchedule":
        return cls(beta, beta, total_steps, "fixed")

    def at(self, t) -> float:
        return beta_at(t, self)


def beta_at(t, schedule: BetaSchedule) -> float:
    T = schedule.total_steps
    if not 0 <= t <= T:
        raise RangeError(f"step {t} outside [0, {T}]")
    if schedule.mode == "fixed":
        return schedule.beta_init
    if t == T:
        return schedule.beta_final
    return schedule.beta_init + (schedule.beta_final - schedule.beta_init) * (t / T)


@dataclass(frozen=True)
class ThresholdPolicy:
    """Either adaptive (``mu + beta * sigma`` per class) or a fixed cut-off."""

    kind: str = "adaptive"
    schedule: BetaSchedule = BetaSchedule()
    fixed_tau: float | None = None

    def __post_init__(self):
        if self.kind not in ("adaptive", "fixed"):
            raise ConfigurationError(f"threshold kind must be 'adaptive' or 'fixed', got {self.kind!r}")
        if self.kind == "fixed" and (self.fixed_tau is None or not math.isfinite(self.fixed_tau)):
            raise ConfigurationError("fixed threshold policy needs a finite fixed_tau")

    @classmethod
    def adaptive(cls, beta_init=1.0, beta_final=2.0, total_steps=1, mode="linear") -> "ThresholdPolicy":
        return cls("adaptive", BetaSchedule(beta_init, beta_final, total_steps, mode))

    @classmethod
    def fixed(cls, tau: float, metric: str = "cosine") -> "ThresholdPolicy":
        if metric == "cosine" and not 0.0 < tau <= 2.0:
            raise ConfigurationError(f"fixed cosine threshold must lie in (0, 2], got {tau}")
        return cls("fixed", fixed_tau=float(tau))

    def beta(self, t) -> float | None:
        return self.schedule.at(t) if self.kind == "adaptive" else None


def bank_stats(bank_set: FeatureBankSet, k: int, metric: str = "cosine") -> dict[int, ClassStats]:
    """Prototype-score statistics for every class; every bank must be full."""
    check_metric(metric)
    out = {}
    for c, bank in bank_set.banks.items():
        if not bank.is_full:
            raise WarmupError(f"class {c} bank holds {len(bank)}/{bank.capacity} prototypes", class_id=c)
        out[c] = class_stats(prototype_scores(bank, k, metric), class_id=c)
    return out


def thresholds_for_bank(bank_set: FeatureBankSet, k: int, metric: str, beta: float) -> dict[int, float]:
    stats = bank_stats(bank_set, k, metric)
    return {c: threshold(s, beta) for c, s in stats.items()}


class ThresholdTracker:
    """Caches per-class statistics until the bank set is mutated.

    The cache key is the tuple of per-class insert counters, so a push into
    any bank invalidates it.
    """

    def __init__(self, k: int, metric: str = "cosine"):
        self.k = k
        self.metric = check_metric(metric)
        self._key = None
        self._stats = None

    def stats(self, bank_set: FeatureBankSet) -> dict[int, ClassStats]:
        key = bank_set.state_key()
        if key != self._key:
            self._stats = bank_stats(bank_set, self.k, self.metric)
            self._key = key
        return self._stats

    def thresholds(self, bank_set: FeatureBankSet, policy: ThresholdPolicy, t=0) -> dict[int, float]:
        if policy.kind == "fixed":
            return {c: policy.fixed_tau for c in bank_set.class_ids}
        beta = policy.beta(t)
        return {c: threshold(s, beta) for c, s in self.stats(bank_set).items()}

    def records(self, bank_set: FeatureBankSet, policy: ThresholdPolicy, t=0) -> list[dict]:
        """Diagnostic rows ``{class_id, mu, sigma, tau, beta, progress}``."""
        T = policy.schedule.total_steps
        beta = policy.beta(t)
        rows = []
        stats = self.stats(bank_set)
        for c, s in stats.items():
            tau = policy.fixed_tau if policy.kind == "fixed" else threshold(s, beta)
            rows.append({"class_id": c, "mu": s.mu, "sigma": s.sigma, "tau": tau, "beta": beta, "progress": t / T})
        return rows
