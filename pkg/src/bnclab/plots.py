"""Figures for the report directory (rendered off-screen; CSVs remain the primary output)."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# no timestamps or version strings, so figures are byte-stable across runs
_META = {"Software": None}


def _save(fig, out_dir, name) -> str:
    fig.savefig(os.path.join(out_dir, name), dpi=100, metadata=_META)
    plt.close(fig)
    return name


def plot_costs(gap_or_erm, out_dir) -> str:
    fig, ax = plt.subplots(figsize=(6, 4))
    train = np.asarray(gap_or_erm.train_means)
    order = np.argsort(train, kind="stable")
    ax.plot(train[order], label="train mean V", drawstyle="steps-mid")
    test = getattr(gap_or_erm, "test_means", None)
    if test is not None:
        ax.plot(np.asarray(test)[order], label="held-out mean V", drawstyle="steps-mid")
    ax.set_xlabel("parameter sample (sorted by train cost)")
    ax.set_ylabel("mean tree size")
    ax.legend()
    return _save(fig, out_dir, "costs.png")


def plot_scans(scans, out_dir, limit: int = 8) -> str:
    fig, ax = plt.subplots(figsize=(6, 4))
    for idx, (inst, sl, scan) in enumerate(scans[:limit]):
        t, v = zip(*scan.rows())
        ax.step(t, v, where="post", label=f"instance {inst}, slice {sl}")
    ax.set_xlabel("t")
    ax.set_ylabel("V(I, w0 + t u)")
    ax.legend(fontsize=7)
    return _save(fig, out_dir, "scans.png")


def plot_census(census, out_dir) -> str:
    fig, ax = plt.subplots(figsize=(6, 4))
    vals = np.asarray(census.values)
    for i in range(vals.shape[1]):
        u, c = np.unique(vals[:, i], return_counts=True)
        ax.plot(u, c, "o-", label=f"I{i + 1}")
    ax.set_xlabel("V")
    ax.set_ylabel("parameter samples")
    ax.set_title(f"{census.count} distinct cost vectors")
    ax.legend(fontsize=7)
    return _save(fig, out_dir, "census.png")


def render_figures(report, out_dir) -> list[str]:
    out = []
    src = report.gap or report.erm
    if src is not None:
        out.append(plot_costs(src, out_dir))
    ver = report.verification
    if ver is not None and ver.scans:
        out.append(plot_scans(ver.scans, out_dir))
    if ver is not None and ver.census is not None:
        out.append(plot_census(ver.census, out_dir))
    return out
