"""Report figures written to image files (no interactive display)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

METHOD_COLORS = {
    "baseline": "0.55",
    "interval": "tab:orange",
    "continuous": "tab:blue",
    "continuous+ape": "tab:green",
}


def _save(fig, path):
    # fixed metadata keeps repeated runs byte-identical
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)


def training_curves(rows, path, title: str = "") -> None:
    """Loss and test-PSNR curves from the training log rows."""
    it = np.array([r.iter for r in rows])
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.4))
    ax1.plot(it, [r.photo_loss for r in rows], label="photo")
    if any(r.distill_loss for r in rows):
        ax1.plot(it, [r.distill_loss for r in rows], label="distillation")
    ax1.set_yscale("log")
    ax1.set_xlabel("iteration")
    ax1.set_ylabel("loss")
    ax1.legend(frameon=False)
    ax2.plot(it, [r.test_psnr for r in rows], color="k")
    ax2.set_xlabel("iteration")
    ax2.set_ylabel("mean test PSNR (dB)")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    _save(fig, path)


def render_grid(renders, targets, path, max_views: int = 8) -> None:
    """Top row: model renders; bottom row: ground truth."""
    n = min(len(renders), max_views)
    fig, axes = plt.subplots(2, n, figsize=(1.4 * n, 3.0), squeeze=False)
    for i in range(n):
        for row, img in enumerate((renders[i], targets[i])):
            ax = axes[row, i]
            ax.imshow(np.clip(img, 0, 1), interpolation="nearest")
            ax.set_xticks([])
            ax.set_yticks([])
        axes[0, i].set_title(f"view {i}", fontsize=8)
    axes[0, 0].set_ylabel("render")
    axes[1, 0].set_ylabel("truth")
    fig.tight_layout()
    _save(fig, path)


def method_bars(summary, path) -> None:
    """Mean test PSNR per method; ``summary`` is a list of ``(method, psnr, ssim, tsed)``."""
    names = [s[0] for s in summary]
    vals = [s[1] for s in summary]
    fig, ax = plt.subplots(figsize=(1.3 * len(names) + 1.5, 3.2))
    ax.bar(range(len(names)), vals, color=[METHOD_COLORS.get(n, "0.3") for n in names])
    ax.set_xticks(range(len(names)), names, fontsize=8)
    lo = min(vals) - 1.0
    ax.set_ylim(lo, max(vals) + 0.5)
    for i, v in enumerate(vals):
        ax.text(i, v + 0.05, f"{v:.2f}", ha="center", va="bottom", fontsize=8)
    ax.set_ylabel("mean test PSNR (dB)")
    fig.tight_layout()
    _save(fig, path)
