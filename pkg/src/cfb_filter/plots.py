"""SVG plots of threshold trajectories and filter rates per epoch."""

from __future__ import annotations

import os


def _pyplot():
    import matplotlib

    matplotlib.use("svg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "cfb-filter"
    return plt


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None})


def plot_thresholds(lines: list[dict], path) -> None:
    plt = _pyplot()
    rows = [r for r in lines if r.get("type") == "threshold"]
    fig, ax = plt.subplots(figsize=(6, 4))
    for c in sorted({r["class_id"] for r in rows}):
        pts = [r for r in rows if r["class_id"] == c]
        x = [r["epoch"] for r in pts]
        mu = [r["mu"] for r in pts]
        tau = [r["tau"] for r in pts]
        (line,) = ax.plot(x, tau, marker="o", label=f"class {c}")
        ax.fill_between(x, mu, tau, color=line.get_color(), alpha=0.15)
    ax.set_xlabel("epoch")
    ax.set_ylabel("OOD threshold")
    ax.legend(fontsize="small")
    fig.tight_layout()
    _save(fig, path)
    plt.close(fig)


def plot_rates(lines: list[dict], path) -> None:
    plt = _pyplot()
    rows = [r for r in lines if r.get("type") == "epoch"]
    fig, ax = plt.subplots(figsize=(6, 4))
    x = [r["epoch"] for r in rows]
    for key in ("id_retention", "ood_leakage", "pseudo_purity", "teacher_accuracy"):
        ax.plot(x, [r.get(key) if r.get(key) is not None else float("nan") for r in rows], marker="o", label=key)
    ax.set_xlabel("epoch")
    ax.set_ylim(-0.02, 1.02)
    ax.legend(fontsize="small")
    fig.tight_layout()
    _save(fig, path)
    plt.close(fig)


def write_plots(lines: list[dict], out_dir) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    paths = [os.path.join(out_dir, "thresholds.svg"), os.path.join(out_dir, "rates.svg")]
    plot_thresholds(lines, paths[0])
    plot_rates(lines, paths[1])
    return paths
