"""Image quality (PSNR, SSIM) and multi-view consistency (TSED) metrics."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
GRAY_WEIGHTS = np.array([0.299, 0.587, 0.114])


@dataclass
class MetricReport:
    psnr: float
    ssim: float
    tsed: float | None = None


def _check_dims(a, b):
    if a.shape != b.shape:
        raise ValueError(f"image dimensions differ: {a.shape} vs {b.shape}")


def psnr(a: np.ndarray, b: np.ndarray, max_value: float = 1.0) -> float:
    """PSNR in dB over all H*W*C values, capped at 99 dB (also for identical images)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_dims(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse <= 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(max_value ** 2 / mse))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    k = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return k / k.sum()


_WINDOW = gaussian_window()


def _filter_valid(img):
    k = _WINDOW
    tmp = sliding_window_view(img, k.size, axis=0) @ k
    return sliding_window_view(tmp, k.size, axis=1) @ k


def _filter_valid_adjoint(g, shape):
    """Transpose of :func:`_filter_valid`."""
    k = _WINDOW
    h, w = shape
    tmp = np.zeros((g.shape[0], w))
    for j in range(k.size):
        tmp[:, j:j + g.shape[1]] += k[j] * g
    out = np.zeros((h, w))
    for i in range(k.size):
        out[i:i + tmp.shape[0], :] += k[i] * tmp
    return out


def to_gray(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    return img if img.ndim == 2 else img @ GRAY_WEIGHTS


def _ssim_terms(x, y):
    c1 = (SSIM_K1 * 1.0) ** 2
    c2 = (SSIM_K2 * 1.0) ** 2
    mx, my = _filter_valid(x), _filter_valid(y)
    mxx, myy, mxy = _filter_valid(x * x), _filter_valid(y * y), _filter_valid(x * y)
    a1 = 2 * mx * my + c1
    a2 = 2 * (mxy - mx * my) + c2
    b1 = mx * mx + my * my + c1
    b2 = (mxx - mx * mx) + (myy - my * my) + c2
    return mx, my, a1, a2, b1, b2


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean SSIM over valid 11x11 Gaussian windows of the grayscale images."""
    _check_dims(np.asarray(a), np.asarray(b))
    x, y = to_gray(a), to_gray(b)
    if min(x.shape) < SSIM_WINDOW:
        raise ValueError(f"image {x.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    _, _, a1, a2, b1, b2 = _ssim_terms(x, y)
    return float(np.mean(a1 * a2 / (b1 * b2)))


def ssim_with_grad(a: np.ndarray, b: np.ndarray) -> tuple[float, np.ndarray]:
    """SSIM and its gradient w.r.t. the color image ``a``."""
    _check_dims(np.asarray(a), np.asarray(b))
    x, y = to_gray(a), to_gray(b)
    if min(x.shape) < SSIM_WINDOW:
        raise ValueError(f"image {x.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    mx, my, a1, a2, b1, b2 = _ssim_terms(x, y)
    s = a1 * a2 / (b1 * b2)
    inv_n = 1.0 / s.size
    denom = b1 * b2
    d_mx = (2 * my * a2 - 2 * my * a1) / denom - s * (2 * mx / b1 - 2 * mx / b2)
    d_mxx = -s / b2
    d_mxy = 2 * a1 / denom
    shape = x.shape
    gx = (_filter_valid_adjoint(d_mx * inv_n, shape)
          + 2 * x * _filter_valid_adjoint(d_mxx * inv_n, shape)
          + y * _filter_valid_adjoint(d_mxy * inv_n, shape))
    grad = gx[..., None] * GRAY_WEIGHTS if np.asarray(a).ndim == 3 else gx
    return float(np.mean(s)), grad


def evaluate(render: np.ndarray, target: np.ndarray) -> MetricReport:
    return MetricReport(psnr(render, target), ssim(render, target))


# ---------------------------------------------------------------------------
# epipolar consistency

def _skew(t):
    return np.array([[0, -t[2], t[1]], [t[2], 0, -t[0]], [-t[1], t[0], 0]])


def fundamental_matrix(cam1, cam2) -> np.ndarray:
    """``F`` with ``x2^T F x1 = 0`` for homogeneous pixel coordinates."""
    r1, t1 = cam1.pose.rotation_matrix, cam1.pose.translation
    r2, t2 = cam2.pose.rotation_matrix, cam2.pose.translation
    r = r2.T @ r1
    t = r2.T @ (t1 - t2)
    return np.linalg.inv(cam2.intrinsics).T @ _skew(t) @ r @ np.linalg.inv(cam1.intrinsics)


def symmetric_epipolar_distance(f: np.ndarray, x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    """Mean of point-to-epipolar-line distances in both images, in pixels."""
    h1 = np.column_stack([x1, np.ones(len(x1))])
    h2 = np.column_stack([x2, np.ones(len(x2))])
    l2 = h1 @ f.T  # lines in image 2
    l1 = h2 @ f  # lines in image 1
    num = np.abs(np.sum(h2 * l2, axis=1))
    d2 = num / np.hypot(l2[:, 0], l2[:, 1])
    d1 = np.abs(np.sum(h1 * l1, axis=1)) / np.hypot(l1[:, 0], l1[:, 1])
    return 0.5 * (d1 + d2)


def tsed(frame_pairs, correspondences, threshold: float = 2.0) -> float:
    """Fraction of correspondences within ``threshold`` px of their epipolar lines, averaged over pairs.

    ``correspondences[i]`` is ``(x1, x2)`` (each ``(N, 2)``) for ``frame_pairs[i]``.
    Pairs without baseline are skipped with a warning.
    """
    fractions = []
    for (c1, c2), (x1, x2) in zip(frame_pairs, correspondences):
        if np.linalg.norm(c1.pose.translation - c2.pose.translation) < 1e-9:
            warnings.warn("skipping degenerate frame pair with zero baseline", stacklevel=2)
            continue
        x1 = np.asarray(x1, dtype=np.float64).reshape(-1, 2)
        x2 = np.asarray(x2, dtype=np.float64).reshape(-1, 2)
        if len(x1) == 0:
            continue
        d = symmetric_epipolar_distance(fundamental_matrix(c1, c2), x1, x2)
        fractions.append(float(np.mean(d <= threshold)))
    if not fractions:
        warnings.warn("no usable frame pairs for TSED", stacklevel=2)
        return float("nan")
    return float(np.mean(fractions))


def _in_view(cam, uv, z, margin=0.0):
    return ((z > cam.near) & (uv[:, 0] >= margin) & (uv[:, 0] <= cam.width - margin)
            & (uv[:, 1] >= margin) & (uv[:, 1] <= cam.height - margin))


def gt_correspondences(cam1, cam2, points) -> tuple[np.ndarray, np.ndarray]:
    """Exact correspondences: projections of 3D points visible in both frames."""
    uv1, z1 = cam1.project_points(points)
    uv2, z2 = cam2.project_points(points)
    keep = _in_view(cam1, uv1, z1) & _in_view(cam2, uv2, z2)
    return uv1[keep], uv2[keep]


def _subpixel(cm, c0, cp):
    denom = cm - 2 * c0 + cp
    if denom <= 1e-12:
        return 0.0
    return float(np.clip(0.5 * (cm - cp) / denom, -0.5, 0.5))


def render_correspondences(img1, img2, cam1, cam2, points, patch: int = 3, search: int = 4):
    """Correspondences measured on rendered frames.

    Each 3D point fixes a location in frame 1 (its projection); its partner in
    frame 2 is the best SSD match of the frame-1 patch inside a window around the
    point's projection in frame 2. Renders that disagree across views move the
    match off the epipolar line.
    """
    g1, g2 = to_gray(img1), to_gray(img2)
    uv1, z1 = cam1.project_points(points)
    uv2, z2 = cam2.project_points(points)
    r = patch + search + 1
    keep = _in_view(cam1, uv1, z1, r) & _in_view(cam2, uv2, z2, r)
    xs1, xs2 = [], []
    for p1, p2 in zip(uv1[keep], uv2[keep]):
        i1, j1 = int(p1[1]), int(p1[0])
        i2, j2 = int(p2[1]), int(p2[0])
        tpl = g1[i1 - patch:i1 + patch + 1, j1 - patch:j1 + patch + 1]
        region = g2[i2 - patch - search:i2 + patch + search + 1, j2 - patch - search:j2 + patch + search + 1]
        cost = np.sum((sliding_window_view(region, tpl.shape) - tpl) ** 2, axis=(2, 3))
        bi, bj = np.unravel_index(int(np.argmin(cost)), cost.shape)
        di = dj = 0.0
        if 0 < bi < cost.shape[0] - 1:
            di = _subpixel(cost[bi - 1, bj], cost[bi, bj], cost[bi + 1, bj])
        if 0 < bj < cost.shape[1] - 1:
            dj = _subpixel(cost[bi, bj - 1], cost[bi, bj], cost[bi, bj + 1])
        xs1.append((j1 + 0.5, i1 + 0.5))
        xs2.append((j2 - search + bj + dj + 0.5, i2 - search + bi + di + 0.5))
    return np.array(xs1).reshape(-1, 2), np.array(xs2).reshape(-1, 2)


def write_metrics_csv(path, rows) -> None:
    """``rows`` of ``(view_id, psnr, ssim, tsed)``; missing values are written as ``nan``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["view_id", "psnr", "ssim", "tsed"])
        for view_id, p, s, t in rows:
            w.writerow([view_id] + [_f4(v) for v in (p, s, t)])


def _f4(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "nan"
    return f"{v:.4f}"
