"""Image fixers: the enhancer applied to degraded renders.

A fixer maps ``(degraded, reference) -> repaired`` with the same shape and
values in ``[0, 1]``. Fixers that need to know which view they repair (the
oracle) take the camera through ``camera=`` and must have it registered first.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.ndimage import gaussian_filter1d

from .metrics import psnr
from .renderer import render


class UnregisteredCameraError(LookupError):
    pass


class Fixer:
    name = "fixer"

    def register(self, camera) -> None:
        """Prepare to repair renders from ``camera``; a no-op unless the fixer needs views."""

    def fix(self, degraded: np.ndarray, reference: np.ndarray, camera=None) -> np.ndarray:
        raise NotImplementedError


class IdentityFixer(Fixer):
    """Returns the render unchanged (null prior)."""

    name = "identity"

    def fix(self, degraded, reference, camera=None):
        return degraded


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


class OracleFixer(Fixer):
    """Blends renders toward the ground-truth view, less so the worse the render.

    ``out = d + gamma_eff * (gt - d)`` with
    ``gamma_eff = gamma * sigmoid((psnr(d, gt) - knee) / 2)``; ``knee=-inf``
    disables the reliability fall-off.
    """

    name = "oracle"

    def __init__(self, scene, gamma: float = 0.8, knee: float = 14.0, background=(0.0, 0.0, 0.0)):
        if not 0.0 < gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]")
        self.scene = scene
        self.gamma = gamma
        self.knee = knee
        self.background = np.asarray(background, dtype=np.float64)
        self._gt = {}

    def register(self, camera) -> None:
        key = camera.key()
        if key not in self._gt:
            self._gt[key] = render(self.scene.ground_truth, camera, self.background)

    def ground_truth(self, camera) -> np.ndarray:
        try:
            return self._gt[camera.key()]
        except (KeyError, AttributeError):
            raise UnregisteredCameraError("camera not registered with the oracle fixer") from None

    def gamma_eff(self, degraded, gt) -> float:
        if math.isinf(self.knee) and self.knee < 0:
            return self.gamma
        return self.gamma * _sigmoid((psnr(degraded, gt) - self.knee) / 2.0)

    def fix(self, degraded, reference, camera=None):
        if camera is None:
            raise UnregisteredCameraError("the oracle fixer needs the camera of the degraded render")
        gt = self.ground_truth(camera)
        d = np.asarray(degraded)
        out = d + self.gamma_eff(d, gt) * (gt - d)
        return np.clip(out, 0.0, 1.0).astype(d.dtype, copy=False)


class BlurFixer(Fixer):
    """Separable Gaussian blur of the render; the reference is ignored."""

    name = "blur"

    def __init__(self, sigma: float = 1.0):
        self.sigma = sigma

    def fix(self, degraded, reference, camera=None):
        d = np.asarray(degraded)
        if self.sigma <= 1e-6:
            return d.copy()
        out = gaussian_filter1d(d, self.sigma, axis=0, mode="nearest")
        out = gaussian_filter1d(out, self.sigma, axis=1, mode="nearest")
        return np.clip(out, 0.0, 1.0)


def make_fixer(kind: str, scene=None, **kw) -> Fixer:
    if kind == "identity":
        return IdentityFixer()
    if kind == "oracle":
        if scene is None:
            raise ValueError("the oracle fixer needs the synthetic scene")
        return OracleFixer(scene, **kw)
    if kind == "blur":
        return BlurFixer(**kw)
    raise ValueError(f"unknown fixer {kind!r}")
