"""Experiment configuration: one flat namespace of dotted keys.

Config files are YAML mappings, either flat (``bank.capacity: 100``) or
nested (``bank: {capacity: 100}``). Unknown keys are rejected. Every key has
a default except ``seed``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable

import yaml

from .exceptions import ConfigurationError
from .sim import FilterConfig, StreamConfig, TrainConfig


@dataclass(frozen=True)
class Key:
    default: Any
    kind: Callable
    doc: str
    choices: tuple | None = None
    nullable: bool = False


def _int(v):
    if isinstance(v, bool) or not isinstance(v, (int, float)) or int(v) != v:
        raise ValueError(f"expected an integer, got {v!r}")
    return int(v)


def _float(v):
    if isinstance(v, bool):
        raise ValueError(f"expected a number, got {v!r}")
    if isinstance(v, str) and "/" in v:
        num, den = v.split("/", 1)
        v = float(num) / float(den)
    f = float(v)
    if not math.isfinite(f):
        raise ValueError(f"expected a finite number, got {v!r}")
    return f


def _str(v):
    if not isinstance(v, str):
        raise ValueError(f"expected a string, got {v!r}")
    return v


SCHEMA: dict[str, Key] = {
    "seed": Key(None, _int, "Seed for every random draw (required)."),
    "epochs": Key(6, _int, "Mutual-learning epochs; T = epochs * iterations per epoch."),
    "n_jobs": Key(1, _int, "Worker threads for batch OOD scoring; output does not depend on it."),
    # feature bank and scoring
    "bank.capacity": Key(100, _int, "Prototypes per class L (best value of the bank-length sweep)."),
    "bank.update": Key("dynamic", _str, "FIFO updates during training, or frozen after warm-up.", ("dynamic", "static")),
    "knn_ratio": Key(0.05, _float, "K = max(1, floor(knn_ratio * L)); 1/20 gives K=5 at L=100."),
    "metric": Key("cosine", _str, "k-NN dissimilarity.", ("cosine", "l1", "l2")),
    # thresholds
    "threshold.kind": Key("adaptive", _str, "Per-class mu + beta*sigma, or one fixed cut-off.", ("adaptive", "fixed")),
    "threshold.fixed_tau": Key(0.5, _float, "Cut-off used when threshold.kind = fixed."),
    "threshold.beta_init": Key(1.0, _float, "beta at t = 0."),
    "threshold.beta_final": Key(2.0, _float, "beta at t = T."),
    # gating
    "filter.mode": Key("cfb", _str, "Pseudo-label gate.", ("none", "cfb", "msp", "entropy", "energy")),
    "filter.conf_tau": Key(0.7, _float, "Confidence threshold applied before any OOD gate (artifact default)."),
    "filter.baseline_cutoff": Key(0.9, _float, "Cut-off for msp/entropy/energy gates."),
    # training
    "train.burn_in_epochs": Key(5, _int, "Supervised passes over the labeled set."),
    "train.burn_in_lr": Key(0.5, _float, "Centroid step size during burn-in."),
    "train.lr": Key(0.2, _float, "Centroid step size during mutual learning."),
    "train.loss_weight": Key(1.0, _float, "lambda weighting the pseudo-label term (artifact default)."),
    "train.ema_alpha": Key(0.999, _float, "Teacher EMA momentum alpha (artifact default)."),
    "train.temperature": Key(0.5, _float, "Logit scale of the surrogate detector."),
    "train.batch_size": Key(32, _int, "Burn-in batch size."),
    "train.unlabeled_batch": Key(64, _int, "Unlabeled samples per mutual-learning iteration."),
    # synthetic stream
    "stream.num_id_classes": Key(5, _int, "ID classes C."),
    "stream.num_ood_classes": Key(1, _int, "OOD clusters."),
    "stream.dimension": Key(16, _int, "Feature dimension D."),
    "stream.cluster_separation": Key(6.0, _float, "Distance between ID centroids, in within-cluster std units."),
    "stream.ood_separation": Key(None, _float, "Distance from each OOD centroid to its nearest ID centroid; null = cluster_separation.", nullable=True),
    "stream.ood_bridge": Key(0.0, _float, "Tilt of each OOD offset toward a neighbouring ID class, in [0, 1)."),
    "stream.drift_rate": Key(0.0, _float, "Centroid displacement per epoch."),
    "stream.contamination": Key(0.0, _float, "Fraction of unlabeled samples drawn from OOD clusters."),
    "stream.spread_min": Key(1.0, _float, "Smallest per-class std multiplier."),
    "stream.spread_max": Key(1.0, _float, "Largest per-class std multiplier."),
    "stream.n_labeled": Key(120, _int, "Labeled samples per class for burn-in."),
    "stream.n_labeled_stream": Key(100, _int, "Labeled samples per epoch during mutual learning."),
    "stream.n_unlabeled": Key(400, _int, "Unlabeled samples per epoch."),
    "stream.n_test": Key(100, _int, "Test samples per class per epoch."),
}

# Contamination regimes of the two DIOR splits; suffix m = L+U+M, mo = L+U+M+O.
REGIMES = {
    "clean": 0.0,
    "split1-m": 0.286,
    "split1-mo": 0.632,
    "split2-m": 0.145,
    "split2-mo": 0.368,
}

_CONTAMINATED = {
    "stream.ood_bridge": 0.45,
    "stream.n_test": 400,
    "train.ema_alpha": 0.9,
    "train.loss_weight": 2.0,
}

PRESETS: dict[str, dict] = {
    name: {"stream.contamination": c, **(_CONTAMINATED if c else {"train.ema_alpha": 0.9})}
    for name, c in REGIMES.items()
}
PRESETS["drift"] = {"stream.contamination": 0.286, "stream.drift_rate": 0.5, "train.ema_alpha": 0.9}


def defaults() -> dict:
    return {k: v.default for k, v in SCHEMA.items()}


def _flatten(d, prefix=""):
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def coerce(key: str, value):
    if key not in SCHEMA:
        raise ConfigurationError(f"unknown config key {key!r}")
    spec = SCHEMA[key]
    if value is None:
        if spec.nullable or key == "seed":
            return None
        raise ConfigurationError(f"{key} must not be null")
    try:
        v = spec.kind(value)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"{key}: {exc}") from None
    if spec.choices and v not in spec.choices:
        raise ConfigurationError(f"{key} must be one of {spec.choices}, got {v!r}")
    return v


def parse_override(text: str) -> tuple[str, Any]:
    """Parse ``key=value``; the value is read as a YAML scalar."""
    key, sep, raw = text.partition("=")
    if not sep or not key.strip():
        raise ConfigurationError(f"override must look like key=value, got {text!r}")
    try:
        value = yaml.safe_load(raw) if raw.strip() else None
    except yaml.YAMLError:
        value = raw
    return key.strip(), value


def resolve(file_values: dict | None = None, overrides=(), preset: str | None = None, require_seed: bool = True) -> dict:
    """Defaults, then preset, then config file, then ``key=value`` overrides."""
    cfg = defaults()
    layers = []
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigurationError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        layers.append(PRESETS[preset])
    if file_values:
        layers.append(_flatten(file_values))
    layers.append(dict(parse_override(o) if isinstance(o, str) else o for o in overrides))
    for layer in layers:
        for k, v in layer.items():
            cfg[k] = coerce(k, v)
    if require_seed and cfg["seed"] is None:
        raise ConfigurationError("seed is required (set it in the config file or with --set seed=N)")
    validate(cfg)
    return cfg


def load_file(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"{path}: invalid YAML: {exc}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: top level must be a mapping")
    return data


def validate(cfg: dict) -> None:
    """Build the typed configs once so bad combinations fail early."""
    stream_config(cfg)
    filter_config(cfg)
    train_config(cfg)


def stream_config(cfg: dict, seed: int | None = None) -> StreamConfig:
    kw = {k.split(".", 1)[1]: v for k, v in cfg.items() if k.startswith("stream.")}
    return StreamConfig(epochs=cfg["epochs"], seed=cfg["seed"] if seed is None else seed, **kw)


def filter_config(cfg: dict) -> FilterConfig:
    return FilterConfig(
        mode=cfg["filter.mode"],
        capacity=cfg["bank.capacity"],
        knn_ratio=cfg["knn_ratio"],
        metric=cfg["metric"],
        threshold_kind=cfg["threshold.kind"],
        beta_init=cfg["threshold.beta_init"],
        beta_final=cfg["threshold.beta_final"],
        fixed_tau=cfg["threshold.fixed_tau"],
        conf_tau=cfg["filter.conf_tau"],
        bank_update=cfg["bank.update"],
        baseline_cutoff=cfg["filter.baseline_cutoff"],
        n_jobs=cfg["n_jobs"],
    )


def train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(**{k.split(".", 1)[1]: v for k, v in cfg.items() if k.startswith("train.")})


def schema_markdown() -> str:
    lines = ["| key | default | description |", "|---|---|---|"]
    for k, spec in SCHEMA.items():
        default = "(required)" if k == "seed" else ("null" if spec.default is None else spec.default)
        choices = f" One of: {', '.join(spec.choices)}." if spec.choices else ""
        lines.append(f"| `{k}` | `{default}` | {spec.doc}{choices} |")
    return "\n".join(lines)
