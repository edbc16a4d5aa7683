"""Matplotlib figures written next to the CSV/JSON reports."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from scipy.stats import norm  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "figure.dpi": 120,
    "savefig.bbox": "tight",
}

DET_TICKS = [0.001, 0.002, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.4]


def figsize(scale=1.0, ratio=None):
    ratio = ratio or (np.sqrt(5.0) - 1.0) / 2.0
    width = 5.5 * scale
    return width, width * ratio


def _save(fig, path):
    # fixed metadata keeps repeated renders byte-stable
    fig.savefig(path, metadata={"Software": None} if str(path).endswith(".png") else None)
    plt.close(fig)
    return path


def plot_det(curves, path, title=None):
    """DET curves on probit axes; ``curves`` maps a label to a DetCurve."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=figsize(0.9, 1.0))
        lo, hi = norm.ppf(DET_TICKS[0]), norm.ppf(DET_TICKS[-1])
        for label, c in curves.items():
            x = np.clip(norm.ppf(c.p_fa), lo - 1, hi + 1)
            y = np.clip(norm.ppf(c.p_miss), lo - 1, hi + 1)
            ax.plot(x, y, drawstyle="steps-post", lw=1.2, label=label)
        ticks = norm.ppf(DET_TICKS)
        labels = [f"{100 * t:g}" for t in DET_TICKS]
        ax.set_xticks(ticks, labels)
        ax.set_yticks(ticks, labels)
        ax.set_xlim(lo, hi)
        ax.set_ylim(lo, hi)
        ax.plot([lo, hi], [lo, hi], color="0.6", lw=0.6, ls=":")
        ax.set_xlabel("False alarm rate (%)")
        ax.set_ylabel("Miss rate (%)")
        if title:
            ax.set_title(title)
        ax.legend(loc="upper right")
        return _save(fig, path)


def plot_sweep(x, series, path, xlabel, ylabel="EER (%)", logx=False):
    """Line plot of one or more metric series over a swept parameter."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=figsize(0.9))
        for label, y in series.items():
            ax.plot(x, y, marker="o", ms=3, lw=1.2, label=label)
        if logx:
            ax.set_xscale("log")
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.legend()
        return _save(fig, path)


def plot_training_times(report, path):
    """Horizontal bars of total TVM training time per method (log scale)."""
    methods = [m["method"] for m in report["methods"]]
    totals = [m["median_total_seconds"] for m in report["methods"]]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=figsize(0.9, 0.45))
        ax.barh(methods, totals, color="0.35")
        ax.set_xscale("log")
        ax.set_xlabel(f"Training time, {report['iterations']} iterations (s)")
        for y, t in enumerate(totals):
            ax.text(t, y, f" {t:.2f}", va="center", fontsize=7)
        ax.invert_yaxis()
        return _save(fig, path)
