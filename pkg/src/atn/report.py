"""Render figures from the delimited outputs (metrics CSV, stats JSON).

Plots are a convenience layer over the data files: the CSV/JSON remain the
contract, and nothing here feeds back into training.
"""

from __future__ import annotations

import csv
import json
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

__all__ = ["plot_metrics", "plot_stats"]

STAT_SITES = ("hh", "ih", "cell")


def _read_metrics(path: str):
    iters, train, val = [], [], []
    with open(path, encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            iters.append(int(row["iteration"]))
            train.append(float(row["train_loss"]))
            val.append(float(row["val_loss"]))
    return iters, train, val


def plot_metrics(csv_paths: list[str], out_path: str,
                 baseline: float | None = None, logy: bool = True) -> str:
    """Loss curves for one or more runs on a shared axis."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for path in csv_paths:
        iters, train, val = _read_metrics(path)
        label = os.path.splitext(os.path.basename(path))[0]
        ax.plot(iters, train, label=f"{label} train")
        ax.plot(iters, val, linestyle="--", label=f"{label} val")
    if baseline is not None:
        ax.axhline(baseline, color="gray", linestyle=":", label="baseline")
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def plot_stats(json_path: str, out_path: str) -> str:
    """Per-timestep post-normalization mean and variance, one panel per site."""
    with open(json_path, encoding="utf-8") as fh:
        records = json.load(fh)
    fig, axes = plt.subplots(2, len(STAT_SITES), figsize=(12, 6), sharex=True)
    for col, site in enumerate(STAT_SITES):
        rows = sorted((r for r in records if r["site"] == site), key=lambda r: r["t"])
        ts = [r["t"] for r in rows]
        axes[0][col].plot(ts, [r["mean"] for r in rows])
        axes[0][col].set_title(f"{site} mean")
        axes[1][col].plot(ts, [r["var"] for r in rows])
        axes[1][col].set_title(f"{site} variance")
        axes[1][col].set_xlabel("t")
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path
