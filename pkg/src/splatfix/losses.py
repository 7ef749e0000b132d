"""Photometric and distillation losses, each returned with its image gradient."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .metrics import ssim_with_grad


@dataclass
class LossConfig:
    lambda_l1: float = 0.2
    lambda_ssim: float = 0.8
    omega_t0: float = 0.5
    t0: int = 199  # fixer timestep; metadata only

    def validate(self) -> None:
        if min(self.lambda_l1, self.lambda_ssim, self.omega_t0) < 0:
            raise ValueError("loss weights must be non-negative")


def _check(a, b):
    if a.shape != b.shape:
        raise ValueError(f"image dimensions differ: {a.shape} vs {b.shape}")


def photo_loss(render: np.ndarray, gt: np.ndarray, cfg: LossConfig | None = None) -> tuple[float, np.ndarray]:
    """``lambda_l1 * mean|r - g| + lambda_ssim * (1 - ssim(r, g))`` and d loss / d render."""
    cfg = cfg or LossConfig()
    r = np.asarray(render, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    _check(r, g)
    diff = r - g
    l1 = float(np.mean(np.abs(diff)))
    grad = (cfg.lambda_l1 / diff.size) * np.sign(diff)
    loss = cfg.lambda_l1 * l1
    if cfg.lambda_ssim:
        s, ds = ssim_with_grad(r, g)
        loss += cfg.lambda_ssim * (1.0 - s)
        grad -= cfg.lambda_ssim * ds
    return loss, grad


def distillation_loss(render: np.ndarray, fixed: np.ndarray, cfg: LossConfig | None = None) -> tuple[float, np.ndarray]:
    """Mean of ``(omega * (render - fixed))**2``; ``fixed`` is a constant target."""
    cfg = cfg or LossConfig()
    r = np.asarray(render, dtype=np.float64)
    f = np.asarray(fixed, dtype=np.float64)
    _check(r, f)
    diff = r - f
    w2 = cfg.omega_t0 ** 2
    return float(w2 * np.mean(diff * diff)), (2.0 * w2 / diff.size) * diff
