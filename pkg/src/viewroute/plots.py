"""Figure rendering for the report-producing commands.

Each report path (training log, bench report, redundancy stats) gets a PNG
written next to its delimited output. Uses the Agg backend so rendering
works headless.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def save_training_figure(log: list[dict], path):
    """Loss curve plus dev MRR checkpoints from the step log."""
    steps = [r["step"] for r in log if "loss" in r]
    losses = [r["loss"] for r in log if "loss" in r]
    dev_steps = [r["step"] for r in log if "dev_mrr" in r]
    dev_mrr = [r["dev_mrr"] for r in log if "dev_mrr" in r]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(steps, losses, lw=0.8, label="loss")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    if dev_steps:
        ax2 = ax.twinx()
        ax2.plot(dev_steps, dev_mrr, "o-", color="tab:orange", label="dev MRR@10")
        ax2.set_ylabel("dev MRR@10")
        ax2.set_ylim(0, 1.05)
    ax.legend(loc="upper right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_bench_figure(report, path):
    """Bar charts of per-query latency and vectors scanned per path."""
    names = list(report.paths)
    med = [report.paths[n]["median_s_per_query"] * 1e3 for n in names]
    scanned = [report.paths[n]["total_vectors_scanned"] for n in names]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 3.5))
    ax1.bar(names, med, color="tab:blue")
    ax1.set_ylabel("median ms / query")
    ax2.bar(names, scanned, color="tab:green")
    ax2.set_ylabel("vectors scanned (one pass)")
    for ax in (ax1, ax2):
        ax.tick_params(axis="x", rotation=20)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_cluster_histogram(stats, path):
    """Distribution of distinct-cluster counts across the analyzed set."""
    hist = stats.histogram()
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar(list(hist.keys()), list(hist.values()), color="tab:purple")
    ax.set_xlabel("distinct clusters per input")
    ax.set_ylabel("count")
    ax.set_title(
        f"threshold={stats.threshold}, linkage={stats.linkage}, "
        f"median={stats.median_clusters:g}"
    )
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
