"""Figures written next to the CLI's text outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from cfpmelody.evaluation import METRICS  # noqa: E402

plt.rcParams.update({
    "figure.dpi": 100,
    "savefig.dpi": 120,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "image.cmap": "magma",
})


def _show(ax, rep, values=None, max_hz=None, title=""):
    v = rep.values if values is None else values
    axis = rep.axis_values
    if max_hz is not None:
        keep = axis <= max_hz
        v, axis = v[keep], axis[keep]
    t = rep.times
    extent = (t[0], t[-1] + rep.hop_seconds, 0, v.shape[0])
    ax.imshow(v, origin="lower", aspect="auto", extent=extent, interpolation="nearest")
    ticks = np.linspace(0, v.shape[0] - 1, 5).astype(int)
    ax.set_yticks(ticks + 0.5)
    if rep.axis_kind == "quefrency":
        ax.set_yticklabels([f"{1000 * axis[i]:.1f}" for i in ticks])
        ax.set_ylabel("quefrency (ms)")
    else:
        ax.set_yticklabels([f"{axis[i]:.0f}" for i in ticks])
        ax.set_ylabel("Hz")
    ax.set_xlabel("time (s)")
    ax.set_title(title)


def plot_cfp_layers(result, path, max_hz: float = 2000.0) -> None:
    """Z0, Z1, Z2 (low half) and Y on a 2x2 grid."""
    fig, axes = plt.subplots(2, 2, figsize=(10, 6.5), constrained_layout=True)
    if result.layers is not None:
        z0, z1, z2 = result.layers
        half = z0.n_bins // 2 + 1
        _show(axes[0, 0], z0, max_hz=max_hz, title="power-scaled spectrogram")
        qmax = 1.0 / 60.0
        z1_half = type(z1)(z1.values[:half], z1.axis_kind, z1.axis_values[:half], z1.hop_seconds,
                           z1.frame_offset)
        _show(axes[0, 1], z1_half, max_hz=qmax, title="generalized cepstrum")
        _show(axes[1, 0], z2, max_hz=max_hz, title="generalized cepstrum of spectrum")
    else:
        _show(axes[0, 0], result.z2_pitch, title="GCoS on pitch axis")
        _show(axes[0, 1], result.z1_pitch, title="GC on pitch axis")
        axes[1, 0].axis("off")
    _show(axes[1, 1], result.y, title="CFP representation")
    fig.savefig(path)
    plt.close(fig)


def plot_extraction(y, salience, contour, path, reference=None) -> None:
    """CNN scores (if any) and the decoded contour over the CFP map."""
    n = 2 if salience is not None else 1
    fig, axes = plt.subplots(n, 1, figsize=(10, 3.2 * n), squeeze=False, constrained_layout=True)
    ax = axes[0, 0]
    _show(ax, y, title="CFP representation with decoded melody")
    t = contour.times + y.frame_offset
    centers = y.axis_values

    def to_row(f):
        return 48 * np.log2(np.where(f > 0, f, np.nan) / centers[0]) + 0.5

    if reference is not None:
        ax.plot(t, to_row(reference.f0), color="cyan", lw=1.0, label="reference")
    ax.plot(t, to_row(contour.f0), ".", color="white", ms=2, label="estimate")
    ax.legend(loc="upper right", fontsize=7)
    if salience is not None:
        _show(axes[1, 0], y, values=salience.probs, title="CNN vocal probability at peaks")
    fig.savefig(path)
    plt.close(fig)


def plot_report(reports, path) -> None:
    """Grouped bars: one group per clip, one bar per metric."""
    labels = [r.label or str(i) for i, r in enumerate(reports)]
    x = np.arange(len(reports))
    width = 0.8 / len(METRICS)
    fig, ax = plt.subplots(figsize=(max(6, 0.9 * len(reports) + 3), 3.5), constrained_layout=True)
    for i, m in enumerate(METRICS):
        ax.bar(x + (i - 2) * width, [100 * getattr(r, m) for r in reports], width, label=m.upper())
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=30, ha="right")
    ax.set_ylim(0, 105)
    ax.set_ylabel("%")
    ax.legend(ncol=5, fontsize=7, loc="lower right")
    fig.savefig(path)
    plt.close(fig)


def plot_training(log, path) -> None:
    epochs = [e["epoch"] for e in log]
    fig, ax = plt.subplots(figsize=(5, 3.2), constrained_layout=True)
    ax.plot(epochs, [e["train_loss"] for e in log], "o-", label="train loss")
    ax2 = ax.twinx()
    ax2.plot(epochs, [e["val_acc"] for e in log], "s--", color="C1", label="val acc")
    ax2.set_ylim(0, 1.02)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax2.set_ylabel("accuracy")
    fig.legend(loc="upper center", ncol=2, fontsize=7)
    fig.savefig(path)
    plt.close(fig)


def plot_bench(rtf_by_mode, path) -> None:
    modes = list(rtf_by_mode)
    fig, ax = plt.subplots(figsize=(4.5, 3), constrained_layout=True)
    ax.bar(modes, [rtf_by_mode[m] for m in modes], color="C0")
    ax.axhline(1.0, color="k", lw=0.8, ls=":")
    ax.set_ylabel("real-time factor")
    fig.savefig(path)
    plt.close(fig)
