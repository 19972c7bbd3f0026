"""Simulation runs, ablation sweeps and their text/JSONL renderings."""

from __future__ import annotations

import json
import statistics

import numpy as np

from . import config as cfgmod
from .bank import FeatureBankSet
from .exceptions import ConfigurationError
from .metrics import auroc
from .scoring import ood_scores
from .sim import SimState, SurrogateDetector, StreamConfig, gen_stream, run_burn_in, simulate

ABLATION_AXES = {
    "bank_length": ("bank.capacity", [20, 50, 100, 200, 500]),
    "metric": ("metric", ["l1", "l2", "cosine"]),
    "threshold": (
        None,
        [
            ("fixed 0.4", {"threshold.kind": "fixed", "threshold.fixed_tau": 0.4}),
            ("fixed 0.5", {"threshold.kind": "fixed", "threshold.fixed_tau": 0.5}),
            ("fixed 0.6", {"threshold.kind": "fixed", "threshold.fixed_tau": 0.6}),
            ("fixed 0.7", {"threshold.kind": "fixed", "threshold.fixed_tau": 0.7}),
            ("beta=0", {"threshold.beta_init": 0.0, "threshold.beta_final": 0.0}),
            ("beta=1", {"threshold.beta_init": 1.0, "threshold.beta_final": 1.0}),
            ("beta=2", {"threshold.beta_init": 2.0, "threshold.beta_final": 2.0}),
            ("beta in [1,2]", {"threshold.beta_init": 1.0, "threshold.beta_final": 2.0}),
            ("beta in [0,2]", {"threshold.beta_init": 0.0, "threshold.beta_final": 2.0}),
        ],
    ),
    "bank": ("bank.update", ["static", "dynamic"]),
    "scorer": (
        None,
        [
            ("none", {"filter.mode": "none"}),
            ("msp", {"filter.mode": "msp", "filter.baseline_cutoff": 0.99}),
            ("entropy", {"filter.mode": "entropy", "filter.baseline_cutoff": 0.05}),
            ("energy", {"filter.mode": "energy", "filter.baseline_cutoff": -0.5}),
            ("cfb", {"filter.mode": "cfb"}),
        ],
    ),
}

SUMMARY_COLUMNS = ("f1", "id_retention", "ood_leakage", "pseudo_purity", "teacher_accuracy")


def summarize(burn: dict, history: list[dict]) -> dict:
    """Run-level metrics.

    Confusion-based rates use counts pooled over all epochs, except
    ``id_retention`` and ``teacher_accuracy`` which are taken from the final
    epoch.
    """
    tot = {k: sum(r[k] for r in history) for k in ("tp", "fp", "tn", "fn", "n_kept", "n_candidates", "ood_accepted")}
    good = sum(r["n_correct"] for r in history)
    tp, fp, fn = tot["tp"], tot["fp"], tot["fn"]
    last = history[-1] if history else {}
    return {
        "f1": 2 * tp / (2 * tp + fp + fn) if (2 * tp + fp + fn) else None,
        "ood_leakage": fn / (tp + fn) if (tp + fn) else None,
        "pseudo_purity": good / tot["n_kept"] if tot["n_kept"] else None,
        "id_retention": last.get("id_retention"),
        "teacher_accuracy": last.get("teacher_accuracy"),
        "burn_in_accuracy": burn["teacher_accuracy"],
        "n_candidates": tot["n_candidates"],
        "n_kept": tot["n_kept"],
        "ood_accepted": tot["ood_accepted"],
    }


def run(cfg: dict, seed: int | None = None):
    """Simulate one resolved config. Returns ``(burn, history, summary)``."""
    sc = cfgmod.stream_config(cfg, seed)
    burn, history, _ = simulate(sc, cfgmod.filter_config(cfg), cfgmod.train_config(cfg))
    return burn, history, summarize(burn, history)


def history_lines(cfg: dict) -> list[dict]:
    """JSONL records for one run: config echo, burn-in, epochs, thresholds, summary."""
    burn, history, summary = run(cfg)
    lines = [{"type": "config", "config": cfg}, {"type": "burn_in", **burn}]
    for rec in history:
        rec = dict(rec)
        thresholds = rec.pop("thresholds", None)
        lines.append({"type": "epoch", **rec})
        for row in thresholds or ():
            lines.append({"type": "threshold", "epoch": rec["epoch"], "beta": rec["beta"],
                          "progress": rec["progress"], **row})
    lines.append({"type": "summary", **summary})
    return lines


def to_jsonl(lines) -> str:
    return "".join(json.dumps(rec, allow_nan=False, sort_keys=False) + "\n" for rec in lines)


def read_jsonl(path) -> list[dict]:
    from .exceptions import FormatError

    out = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise FormatError(f"invalid JSON: {exc.msg}", line=n, column=exc.colno, path=path) from None
    return out


def _median(xs):
    xs = [x for x in xs if x is not None]
    return statistics.median(xs) if xs else None


def ablate(axis: str, cfg: dict, seeds) -> list[dict]:
    """Sweep one axis; each row holds median summary metrics over ``seeds``."""
    if axis not in ABLATION_AXES:
        raise ConfigurationError(f"unknown ablation axis {axis!r}; choose from {sorted(ABLATION_AXES)}")
    key, values = ABLATION_AXES[axis]
    rows = []
    for v in values:
        if key is None:
            label, over = v
        else:
            label, over = str(v), {key: v}
        if axis == "bank_length":
            over["stream.n_labeled"] = max(cfg["stream.n_labeled"], v)
        c = cfgmod.resolve(cfg, over.items())
        sums = [run(c, s)[2] for s in seeds]
        row = {"axis": axis, "value": label}
        for col in SUMMARY_COLUMNS:
            row[col] = _median([s[col] for s in sums])
        rows.append(row)
    return rows


def format_table(rows: list[dict], columns=("value",) + SUMMARY_COLUMNS) -> str:
    def cell(v):
        if v is None:
            return "-"
        return f"{v:.4f}" if isinstance(v, float) else str(v)

    body = [[cell(r.get(c)) for c in columns] for r in rows]
    widths = [max(len(c), *(len(b[i]) for b in body)) if body else len(c) for i, c in enumerate(columns)]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    out = [fmt.format(*columns), fmt.format(*("-" * w for w in widths))]
    out += [fmt.format(*b) for b in body]
    return "\n".join(out) + "\n"


def cfb_auroc(stream_cfg: StreamConfig, capacity: int = 100, knn_ratio: float = 0.05, metric: str = "cosine",
              burn_in_epochs: int = 5) -> float:
    """AUROC of the feature-bank score on epoch-1 unlabeled data after burn-in.

    Each unlabeled sample is scored against the bank of the class the
    burned-in detector predicts for it.
    """
    from .scoring import k_from_ratio

    stream = gen_stream(stream_cfg)
    C, D = stream_cfg.num_id_classes, stream_cfg.dimension
    init = SurrogateDetector(np.zeros((C, D)))
    state = SimState(init.copy(), init.copy(), FeatureBankSet(C, capacity, D))
    lab = stream.select("labeled", 0)
    run_burn_in(state, stream.features[lab], stream.class_id[lab], burn_in_epochs,
                rng=np.random.default_rng([stream_cfg.seed, 1]))
    u = stream.select("unlabeled", 1)
    X = stream.features[u]
    pred, _, _ = state.teacher.predict_batch(X)
    k = k_from_ratio(capacity, knn_ratio)
    scores = np.empty(len(u))
    for c in range(C):
        m = pred == c
        if m.any():
            scores[m] = ood_scores(X[m], state.bank_set.bank(c), k, metric)
    return auroc(scores, stream.class_id[u] < 0)
