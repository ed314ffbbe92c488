"""Matplotlib figures for the report-emitting commands (written next to the
delimited output; headless backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .evalmetrics import MetricsReport  # noqa: E402
from .pruner import RetentionBucket  # noqa: E402


def save_retention_figure(buckets: list[RetentionBucket], path: Path) -> None:
    """Grouped bars: object retention split direct/indirect, plus triplet rate."""
    labels = [b.label for b in buckets]
    x = range(len(buckets))
    fig, ax = plt.subplots(figsize=(7, 4))
    direct = [100 * b.direct_retention for b in buckets]
    indirect = [100 * b.indirect_retention for b in buckets]
    ax.bar(x, direct, width=0.55, label="directly important", color="#3b6fb6")
    ax.bar(x, indirect, width=0.55, bottom=direct, label="indirectly important",
           color="#9ec2e8")
    ax.plot(x, [100 * b.triplet_retention for b in buckets], "o-",
            color="#c44e52", label="triplets retained")
    ax.set_xticks(list(x), labels)
    ax.set_xlabel("graph size (objects)")
    ax.set_ylabel("retention %")
    ax.set_ylim(0, 105)
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_loss_figure(losses: list[float], path: Path, title: str = "training loss") -> None:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(range(1, len(losses) + 1), losses, color="#3b6fb6")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_metrics_figure(report: MetricsReport, path: Path) -> None:
    names, values = [], []
    for metric, k, value in report.rows():
        names.append(f"{metric.upper()}@{k}" if k != "-" else metric.upper())
        values.append(value)
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.bar(range(len(values)), values, color="#3b6fb6")
    ax.set_xticks(range(len(names)), names, rotation=30, ha="right")
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("score")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
