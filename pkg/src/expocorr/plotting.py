"""Figures written next to the CSV reports."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence

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
    "savefig.dpi": 120,
}

LOSS_COLUMNS = ("total", "pyr", "rec", "ssim", "adv")


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_training_log(rows: Sequence[dict], path, smooth: int = 5) -> Path:
    """Loss components per step, one panel per training phase."""
    phases = sorted({int(r["phase"]) for r in rows}) or [1]
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(phases), figsize=(4.2 * len(phases), 3.0), squeeze=False)
        for ax, phase in zip(axes[0], phases):
            sub = [r for r in rows if int(r["phase"]) == phase]
            steps = np.array([int(r["step"]) for r in sub])
            for col in LOSS_COLUMNS:
                y = np.array([float(r[col]) for r in sub])
                if not y.size or not np.any(y):
                    continue
                if smooth > 1 and y.size >= smooth:
                    y = np.convolve(y, np.ones(smooth) / smooth, mode="valid")
                    x = steps[smooth - 1 :]
                else:
                    x = steps
                ax.plot(x, y, lw=1.2, label=col)
            starts = [r["step"] for r in sub if int(r.get("disc_active", 0))]
            if starts:
                ax.axvline(starts[0], color="0.5", ls=":", lw=1)
            ax.set_yscale("log")
            ax.set_xlabel("step")
            ax.set_title(f"phase {phase}")
            ax.legend(frameon=False)
        axes[0][0].set_ylabel("loss")
        return _save(fig, path)


def plot_evaluation(rows: Sequence[tuple[str, float, float]], path, baseline: Sequence[tuple[str, float, float]] | None = None) -> Path:
    """PSNR/SSIM per image, optionally against a baseline (e.g. the corrupted input)."""
    names = [r[0] for r in rows]
    x = np.arange(len(rows))
    with plt.rc_context(STYLE):
        fig, (ax_p, ax_s) = plt.subplots(2, 1, figsize=(max(4.0, 0.25 * len(rows) + 2), 4.4), sharex=True)
        for ax, col, label in ((ax_p, 1, "PSNR [dB]"), (ax_s, 2, "SSIM")):
            vals = np.array([r[col] for r in rows], dtype=float)
            finite = np.where(np.isfinite(vals), vals, np.nan)
            ax.plot(x, finite, "o", ms=3.5, label="enhanced")
            if baseline is not None:
                ax.plot(x, [b[col] for b in baseline], "x", ms=3.5, color="0.45", label="input")
            mean = np.nanmean(finite) if np.any(np.isfinite(finite)) else math.nan
            if math.isfinite(mean):
                ax.axhline(mean, lw=0.8, ls="--")
            ax.set_ylabel(label)
        ax_s.set_xticks(x)
        ax_s.set_xticklabels(names, rotation=90, fontsize=6)
        ax_p.legend(frameon=False)
        return _save(fig, path)


def plot_pyramid(gauss_levels: Sequence[np.ndarray], laplace_levels: Sequence[np.ndarray], path) -> Path:
    """Gaussian levels on top, offset band-pass levels below."""
    n = len(gauss_levels)
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(2, n, figsize=(2.2 * n, 4.6), squeeze=False)
        for i in range(n):
            axes[0][i].imshow(np.clip(gauss_levels[i], 0, 1))
            axes[0][i].set_title(f"g{i + 1}")
            shown = laplace_levels[i] if i == n - 1 else laplace_levels[i] + 0.5
            axes[1][i].imshow(np.clip(shown, 0, 1))
            axes[1][i].set_title(f"l{i + 1}")
        for ax in axes.flat:
            ax.set_axis_off()
        return _save(fig, path)
