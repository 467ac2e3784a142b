"""Static figure rendering for experiment reports.

SVG output is made byte-reproducible by pinning the hash salt and stripping
the date metadata, so figures can sit next to the deterministic CSV output.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from gaze_vtnet.evalharness import METRICS, ExperimentReport

matplotlib.rcParams["svg.hashsalt"] = "gaze-vtnet"


def render_metric_means(report: ExperimentReport, out_path: str | Path) -> Path:
    """Bar chart of per-metric means with run-std error bars, one group per model/task."""
    out_path = Path(out_path)
    blocks = report.blocks
    n_groups = len(blocks)
    width = 0.8 / len(METRICS)

    fig, ax = plt.subplots(figsize=(max(4.0, 1.8 * n_groups), 3.2))
    for m_idx, metric in enumerate(METRICS):
        xs = [g + m_idx * width for g in range(n_groups)]
        means = [b.mean[metric] for b in blocks]
        stds = [b.std[metric] for b in blocks]
        ax.bar(xs, means, width=width, yerr=stds, capsize=2, label=metric)
    ax.set_xticks([g + width for g in range(n_groups)])
    ax.set_xticklabels([f"{b.classifier}\n{b.task}" for b in blocks], fontsize=8)
    ax.set_ylim(0.0, 1.05)
    ax.set_ylabel("metric mean over runs")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, metadata={"Date": None} if out_path.suffix == ".svg" else None)
    plt.close(fig)
    return out_path
