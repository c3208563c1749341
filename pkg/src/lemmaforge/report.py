"""Figure rendering for evaluation and training artifacts.

Every function writes a PNG next to the delimited files the numbers came
from; nothing here feeds back into the pipeline.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt


def save_pass_curve(path, curves: Mapping[str, Sequence[tuple[int, float]]]):
    """Pass rate against number of pooled attempts, one line per label."""
    fig, ax = plt.subplots(figsize=(5, 3.4))
    for label, points in curves.items():
        ks = [p[0] for p in points]
        rates = [p[1] for p in points]
        ax.plot(ks, rates, marker="o", label=label)
    ax.set_xlabel("attempts pooled (k)")
    ax.set_ylabel("pass rate")
    ax.set_ylim(0, 1.02)
    ax.grid(alpha=0.3)
    if len(curves) > 1:
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_depth_breakdown(path, breakdown: Mapping[int, dict]):
    """Grouped bars: per ground-truth depth, pass share by proof-tree depth."""
    fig, ax = plt.subplots(figsize=(5.5, 3.4))
    gt_depths = sorted(int(g) for g in breakdown)
    tree_depths = sorted(
        {int(d) for g in breakdown.values() for d in g["by_tree_depth"]}
    )
    width = 0.8 / max(1, len(tree_depths))
    for i, td in enumerate(tree_depths):
        xs = [g + (i - (len(tree_depths) - 1) / 2) * width for g in gt_depths]
        ys = [
            breakdown[g]["by_tree_depth"].get(str(td), {}).get("rate", 0.0)
            for g in gt_depths
        ]
        ax.bar(xs, ys, width=width, label=f"tree depth {td}")
    totals = [breakdown[g]["pass_rate"] for g in gt_depths]
    ax.plot(gt_depths, totals, "k.--", label="overall")
    ax.set_xticks(gt_depths)
    ax.set_xlabel("ground-truth proof depth")
    ax.set_ylabel("pass rate")
    ax.set_ylim(0, 1.02)
    ax.grid(alpha=0.3, axis="y")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_training_curves(path, metrics: Sequence[dict]):
    """Local/global rates, novel-lemma fraction, and buffer growth per round."""
    rounds = [m["round"] for m in metrics]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.4))
    ax1.plot(rounds, [m["local_rate"] for m in metrics], label="locally correct")
    ax1.plot(rounds, [m["global_rate"] for m in metrics], label="globally correct")
    ax1.plot(
        rounds,
        [m["novel_lemma_fraction"] for m in metrics],
        label="novel lemma fraction",
    )
    ax1.set_xlabel("round")
    ax1.set_ylim(0, 1.02)
    ax1.grid(alpha=0.3)
    ax1.legend(fontsize=8)
    ax2.plot(rounds, [m["buffer_size"] for m in metrics], label="buffer size")
    ax2.plot(rounds, [m["buffer_novel"] for m in metrics], label="novel in buffer")
    ax2.plot(
        rounds, [m["cumulative_proved"] for m in metrics], label="proved (cumulative)"
    )
    ax2.set_xlabel("round")
    ax2.grid(alpha=0.3)
    ax2.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
