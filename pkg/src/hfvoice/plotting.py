"""Diagnostic figures written next to the CLI's CSV/JSON outputs.

Everything renders with the Agg backend to PNG files without embedded
software/date metadata, so reruns give identical bytes.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
    "savefig.dpi": 120,
    "svg.hashsalt": "hfvoice",
}
CLASS_COLORS = ("#3b6ea5", "#c8553d")


def _short(name, width=38):
    return name if len(name) <= width else "..." + name[-(width - 3):]


def save(fig, path):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    fig.savefig(path, metadata={"Software": None}, bbox_inches="tight")
    plt.close(fig)
    return path


def missing_map(matrix, path):
    """Patients x features image of missing (pre-imputation) values."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(8, 3))
        miss = np.isnan(matrix.raw)
        ax.imshow(miss, aspect="auto", cmap="Greys", interpolation="nearest", vmin=0, vmax=1)
        ax.set_xlabel(f"feature index ({matrix.shape[1]} columns)")
        ax.set_ylabel("patient")
        ax.set_title(f"missing values: {int(miss.sum())} of {miss.size}")
        return save(fig, path)


def mi_scatter(report, path):
    """Full-data vs subsample-mean MI with the threshold box."""
    t = report.config["mi_threshold"]
    names = list(report.mi_full)
    full = np.array([report.mi_full[n] for n in names])
    sub = np.array([report.mi_subset_avg[n] for n in names])
    sel = np.isin(names, report.selected)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 4))
        ax.scatter(full[~sel], sub[~sel], s=8, c="0.6", label="candidates")
        ax.scatter(full[sel], sub[sel], s=24, c=CLASS_COLORS[1], label="selected")
        ax.axvline(t, c="k", lw=0.8, ls="--")
        ax.axhline(t, c="k", lw=0.8, ls="--")
        ax.set_xlabel("MI, full training set (nats)")
        ax.set_ylabel("MI, subsample mean (nats)")
        ax.legend(frameon=False, loc="upper left")
        return save(fig, path)


def coefficients(model, path):
    theta = np.asarray(model.theta)
    order = np.argsort(np.abs(theta))
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6, 0.35 * len(theta) + 1))
        y = np.arange(len(theta))
        ax.barh(y, theta[order], color=[CLASS_COLORS[int(v > 0)] for v in theta[order]])
        ax.set_yticks(y, [_short(model.feature_names[i]) for i in order])
        ax.axvline(0, c="k", lw=0.6)
        ax.set_xlabel("coefficient (standardized units)")
        return save(fig, path)


def objective_trace(trace, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4, 3))
        ax.plot(np.arange(len(trace)), trace, "o-", ms=3, c=CLASS_COLORS[0])
        ax.set_xlabel("iteration")
        ax.set_ylabel("objective")
        return save(fig, path)


def confusion(metrics, path, title=""):
    m = np.array([[metrics.tn, metrics.fp], [metrics.fn, metrics.tp]])
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.2, 3))
        ax.imshow(m, cmap="Blues", vmin=0)
        for (i, j), v in np.ndenumerate(m):
            ax.text(j, i, str(v), ha="center", va="center",
                    color="white" if v > m.max() / 2 else "black")
        ax.set_xticks([0, 1], ["pred 0", "pred 1"])
        ax.set_yticks([0, 1], ["true 0", "true 1"])
        ax.set_title(title or f"accuracy {metrics.accuracy:.3f}")
        return save(fig, path)


def predictor_by_class(z, labels, path, threshold=0.0):
    """Strip plot of the acoustic predictor per class."""
    z = np.asarray(z, dtype=np.float64)
    y = np.asarray(labels, dtype=int)
    rng = np.random.default_rng(0)  # horizontal jitter only
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.5, 3.5))
        for c in (0, 1):
            v = z[y == c]
            ax.scatter(c + 0.08 * rng.standard_normal(v.size), v, s=14, c=CLASS_COLORS[c])
            if v.size:
                ax.hlines(v.mean(), c - 0.25, c + 0.25, colors="k", lw=1)
        ax.axhline(threshold, c="0.5", lw=0.8, ls="--")
        ax.set_xticks([0, 1], ["class 0", "class 1"])
        ax.set_xlim(-0.6, 1.6)
        ax.set_ylabel("acoustic predictor z")
        return save(fig, path)


def waveform(seg, path, title=""):
    x = seg.samples
    t = np.arange(len(x)) / seg.sample_rate
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(7, 2))
        ax.plot(t, x, lw=0.4, c=CLASS_COLORS[0])
        ax.set_xlabel("time (s)")
        ax.set_title(title or seg.section.filename)
        return save(fig, path)
