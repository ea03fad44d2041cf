"""Matplotlib renderings of the report artifacts.

Every function writes one PNG next to the delimited output it illustrates.
The library metrics stay figure-free; only the CLI report path calls in
here. PNG metadata is stripped so repeated runs produce identical bytes.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .metrics import CalibrationReport, SweepRow, UsageReport

_SAVE_KW = {"dpi": 110, "metadata": {"Software": None}}


def save_usage_figure(report: UsageReport, path: str) -> None:
    """Exit-stage ratios and per-exit pivot-rank ratios, side by side."""
    fig, (ax_exit, ax_pivot) = plt.subplots(1, 2, figsize=(9, 3.4))

    exits = list(range(len(report.exit_ratio)))
    ax_exit.bar(exits, report.exit_ratio, color="#4878cf")
    ax_exit.set_xlabel("exit stage")
    ax_exit.set_ylabel("fraction of samples")
    ax_exit.set_title("where samples exit")
    ax_exit.set_xticks(exits)
    ax_exit.set_ylim(0, 1)

    ranks = sorted({m for dist in report.pivot_ratio.values() for m in dist})
    width = 0.8 / max(len(ranks), 1)
    for j, m in enumerate(ranks):
        xs = [e + j * width for e in report.pivot_ratio]
        ys = [dist.get(m, 0.0) for dist in report.pivot_ratio.values()]
        ax_pivot.bar(xs, ys, width=width, label=f"rank {m}")
    ax_pivot.set_xlabel("exit stage")
    ax_pivot.set_ylabel("fraction of decisions")
    ax_pivot.set_title("which voter settles the stage")
    ax_pivot.set_xticks(list(report.pivot_ratio))
    ax_pivot.set_ylim(0, 1)
    if ranks:
        ax_pivot.legend(fontsize=8)

    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def save_calibration_figure(reports: dict[str, CalibrationReport], path: str) -> None:
    """Reliability bars (confidence vs accuracy per bin) for each population."""
    names = list(reports)
    fig, axes = plt.subplots(1, len(names), figsize=(3.2 * len(names), 3.2), squeeze=False)
    for ax, name in zip(axes[0], names):
        report = reports[name]
        m = report.num_bins
        centers = [(b + 0.5) / m for b in range(m)]
        accs = [s.mean_accuracy for s in report.bins]
        ax.bar(centers, accs, width=0.9 / m, color="#4878cf", label="accuracy")
        ax.plot([0, 1], [0, 1], "k--", linewidth=1)
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1)
        ax.set_xlabel("confidence")
        ax.set_ylabel("accuracy")
        ax.set_title(f"{name} (ece={report.ece:.3f})", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def save_sweep_figure(rows: list[SweepRow], path: str) -> None:
    """Accuracy against mean latency-proxy cost, one curve per criterion."""
    fig, ax = plt.subplots(figsize=(5, 3.6))
    for criterion in sorted({r.criterion for r in rows}):
        points = sorted(
            (r for r in rows if r.criterion == criterion), key=lambda r: r.mean_f_m
        )
        ax.plot(
            [p.mean_f_m for p in points],
            [p.accuracy for p in points],
            marker="o",
            label=criterion,
        )
        for p in points:
            ax.annotate(
                f"{p.tau:g}", (p.mean_f_m, p.accuracy), fontsize=7,
                textcoords="offset points", xytext=(4, 4),
            )
    ax.set_xlabel("mean F_M (MACs)")
    ax.set_ylabel("accuracy")
    ax.set_title("threshold sweep")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
