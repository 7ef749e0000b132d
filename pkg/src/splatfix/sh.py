"""Real spherical harmonics up to degree 3 (graphics normalization)."""

from __future__ import annotations

import numpy as np

C0 = 0.28209479177387814
C1 = 0.4886025119029199
C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
      -1.0925484305920792, 0.5462742152960396)
C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
      0.3731763325901154, -0.4570457994644658, 1.445305721320277,
      -0.5900435899266435)

# Added to the SH sum so that all-zero coefficients give mid gray.
COLOR_OFFSET = 0.5


def num_coeffs(degree: int) -> int:
    if not 0 <= degree <= 3:
        raise ValueError(f"SH degree must be in 0..3, got {degree}")
    return (degree + 1) ** 2


def basis(dirs: np.ndarray, degree: int) -> np.ndarray:
    """Basis values for unit directions ``(N, 3)`` -> ``(N, K)``."""
    dirs = np.asarray(dirs)
    n = dirs.shape[0]
    out = np.empty((n, num_coeffs(degree)), dtype=dirs.dtype)
    out[:, 0] = C0
    if degree == 0:
        return out
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    out[:, 1] = -C1 * y
    out[:, 2] = C1 * z
    out[:, 3] = -C1 * x
    if degree == 1:
        return out
    xx, yy, zz = x * x, y * y, z * z
    out[:, 4] = C2[0] * x * y
    out[:, 5] = C2[1] * y * z
    out[:, 6] = C2[2] * (2 * zz - xx - yy)
    out[:, 7] = C2[3] * x * z
    out[:, 8] = C2[4] * (xx - yy)
    if degree == 2:
        return out
    out[:, 9] = C3[0] * y * (3 * xx - yy)
    out[:, 10] = C3[1] * x * y * z
    out[:, 11] = C3[2] * y * (4 * zz - xx - yy)
    out[:, 12] = C3[3] * z * (2 * zz - 3 * xx - 3 * yy)
    out[:, 13] = C3[4] * x * (4 * zz - xx - yy)
    out[:, 14] = C3[5] * z * (xx - yy)
    out[:, 15] = C3[6] * x * (xx - 3 * yy)
    return out


def basis_grad(dirs: np.ndarray, degree: int) -> np.ndarray:
    """Partial derivatives of :func:`basis` w.r.t. the raw direction components, ``(N, K, 3)``."""
    dirs = np.asarray(dirs)
    n = dirs.shape[0]
    g = np.zeros((n, num_coeffs(degree), 3), dtype=dirs.dtype)
    if degree == 0:
        return g
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    g[:, 1, 1] = -C1
    g[:, 2, 2] = C1
    g[:, 3, 0] = -C1
    if degree == 1:
        return g
    xx, yy, zz = x * x, y * y, z * z
    g[:, 4] = C2[0] * np.stack([y, x, 0 * x], axis=1)
    g[:, 5] = C2[1] * np.stack([0 * x, z, y], axis=1)
    g[:, 6] = C2[2] * np.stack([-2 * x, -2 * y, 4 * z], axis=1)
    g[:, 7] = C2[3] * np.stack([z, 0 * x, x], axis=1)
    g[:, 8] = C2[4] * np.stack([2 * x, -2 * y, 0 * x], axis=1)
    if degree == 2:
        return g
    g[:, 9] = C3[0] * np.stack([6 * x * y, 3 * xx - 3 * yy, 0 * x], axis=1)
    g[:, 10] = C3[1] * np.stack([y * z, x * z, x * y], axis=1)
    g[:, 11] = C3[2] * np.stack([-2 * x * y, 4 * zz - xx - 3 * yy, 8 * y * z], axis=1)
    g[:, 12] = C3[3] * np.stack([-6 * x * z, -6 * y * z, 6 * zz - 3 * xx - 3 * yy], axis=1)
    g[:, 13] = C3[4] * np.stack([4 * zz - 3 * xx - yy, -2 * x * y, 8 * x * z], axis=1)
    g[:, 14] = C3[5] * np.stack([2 * x * z, -2 * y * z, xx - yy], axis=1)
    g[:, 15] = C3[6] * np.stack([3 * xx - 3 * yy, -6 * x * y, 0 * x], axis=1)
    return g


def sh_to_color(sh_coeffs: np.ndarray, view_dir, degree: int | None = None) -> np.ndarray:
    """Unclamped RGB of one Gaussian: ``sh_coeffs`` is ``(K, 3)``, ``view_dir`` a unit 3-vector."""
    sh_coeffs = np.asarray(sh_coeffs, dtype=np.float64)
    if degree is None:
        degree = int(round(np.sqrt(sh_coeffs.shape[0]))) - 1
    b = basis(np.asarray(view_dir, dtype=np.float64).reshape(1, 3), degree)[0]
    return b @ sh_coeffs + COLOR_OFFSET


def rgb_to_dc(rgb) -> np.ndarray:
    """DC coefficient that reproduces ``rgb`` for every view direction."""
    return (np.asarray(rgb, dtype=np.float64) - COLOR_OFFSET) / C0
