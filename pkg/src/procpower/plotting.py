"""Figures for fit quality and energy attribution.

Everything renders off-screen and is written straight to a file; the format
follows the file extension (png, pdf, svg...).
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .taxonomy import CLASSES  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.bbox": "tight",
    "savefig.dpi": 150,
}


def figsize(scale=1.0, ratio=None):
    """Width/height in inches for a figure ``scale`` times a 6.3in column."""
    width = 6.3 * scale
    if ratio is None:
        ratio = (np.sqrt(5.0) - 1.0) / 2.0
    return width, width * ratio


def _save(fig, path):
    fig.savefig(path)
    plt.close(fig)


def plot_fit(measured, predicted, path, title="Predicted vs measured power"):
    """Parity plot of model predictions against measured power."""
    measured = np.asarray(measured, dtype=float)
    predicted = np.asarray(predicted, dtype=float)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=figsize(0.7, 0.85))
        ax.scatter(measured, predicted, s=6, alpha=0.5, lw=0)
        lo = min(measured.min(), predicted.min())
        hi = max(measured.max(), predicted.max())
        ax.plot([lo, hi], [lo, hi], color="k", lw=0.8, ls="--", label="ideal")
        rmse = float(np.sqrt(np.mean((measured - predicted) ** 2)))
        ax.set_xlabel("measured power [W]")
        ax.set_ylabel("predicted power [W]")
        ax.set_title(f"{title} (RMSE {rmse:.2f} W)")
        ax.legend(loc="upper left", frameon=False)
        _save(fig, path)


def plot_weights(model, path):
    """Bar chart of the per-class weights of a model."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=figsize(0.8))
        x = np.arange(len(CLASSES))
        ax.bar(x, model.gamma, color=["C0" if s.value == "linear" else "C1" for s in model.sigma])
        ax.set_xticks(x, [c.label for c in CLASSES], rotation=35, ha="right")
        ax.set_ylabel("weight [W per feature unit]")
        ax.set_title(f"{model.device.value.upper()} model, intercept {model.intercept:.2f} W")
        _save(fig, path)


def plot_attribution(report, path):
    """Stacked per-process dynamic power over time, idle power underneath."""
    t = np.asarray(report.timestamps, dtype=float)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=figsize(1.0, 0.45))
        if len(t):
            idle = np.full_like(t, report.idle_power_w)
            series = [idle] + [np.asarray(p.power) for p in report.processes.values()]
            labels = ["idle"] + list(report.processes)
            palette = plt.get_cmap("tab20").colors
            colors = ["0.75"] + [palette[i % len(palette)] for i in range(len(report.processes))]
            ax.stackplot(t, *series, labels=labels, colors=colors, alpha=0.85)
            ax.legend(loc="upper left", ncol=min(4, len(labels)), frameon=False)
        ax.set_xlabel("time [s]")
        ax.set_ylabel("power [W]")
        ax.set_title("Attributed power")
        _save(fig, path)
