"""Optional SVG plots for evaluation reports."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

__all__ = ["plot_scenario_summary"]


def plot_scenario_summary(reports: dict, path):
    """Bar chart of scenario mAP plus a mean-mAP-per-count line."""
    ids = list(reports)
    maps = [reports[i]["map"] for i in ids]
    counts = [len(reports[i]["missing_views"]) for i in ids]

    fig, axes = plt.subplots(1, 2, figsize=(12, 4))
    ax = axes[0]
    ax.bar(range(len(ids)), maps, color="#4878a8")
    ax.set_xticks(range(len(ids)))
    ax.set_xticklabels(ids, rotation=90, fontsize=6)
    ax.set_ylabel("mAP")
    ax.set_title("per-scenario mAP")

    by_k: dict[int, list[float]] = {}
    for m, k in zip(maps, counts):
        by_k.setdefault(k, []).append(m)
    ks = sorted(by_k)
    means = [sum(by_k[k]) / len(by_k[k]) for k in ks]
    ax = axes[1]
    ax.plot(ks, means, marker="o", color="#a85448")
    ax.set_xlabel("missing views")
    ax.set_ylabel("mean mAP")
    ax.set_title("degradation by missing-view count")
    ax.set_xticks(ks)

    fig.tight_layout()
    fig.savefig(Path(path), format="svg")
    plt.close(fig)
