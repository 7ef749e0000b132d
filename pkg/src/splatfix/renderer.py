"""Differentiable software rasterizer for Gaussian clouds.

Forward: EWA projection of each Gaussian, global depth sort, 16x16 tile
binning, front-to-back compositing. Backward: per-pixel gradients from the
compositing kernel, then an analytic chain through the projection, the
covariance factorization and the SH color model.

Images are ``(H, W, 3)`` numpy arrays in ``[0, 1]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _raster, sh
from .scene import Camera, GaussianCloud

TILE = 16
LOWPASS = 0.3
CULL_SIGMA = 3.0


class GradientError(FloatingPointError):
    """Non-finite gradient; ``index`` is the offending Gaussian."""

    def __init__(self, index: int, field: str):
        super().__init__(f"non-finite gradient for Gaussian {index} ({field})")
        self.index = index
        self.field = field


@dataclass
class Splat2D:
    mean2d: np.ndarray
    cov2d: np.ndarray
    depth: float
    color: np.ndarray
    opacity: float
    source_index: int


@dataclass
class Projection:
    """Per-Gaussian screen-space quantities plus what the backward pass reuses.

    Arrays cover every Gaussian of the cloud; ``visible`` marks the survivors of
    culling and ``order`` lists the visible indices front to back.
    """

    visible: np.ndarray
    order: np.ndarray
    mean2d: np.ndarray
    cov2d: np.ndarray
    conic: np.ndarray
    depth: np.ndarray
    opacity: np.ndarray
    color: np.ndarray
    bbox: np.ndarray
    # cached intermediates
    pcam: np.ndarray
    jw: np.ndarray
    cov3d: np.ndarray
    rot: np.ndarray
    qhat: np.ndarray
    qnorm: np.ndarray
    scale: np.ndarray
    dirs: np.ndarray
    dir_norm: np.ndarray
    color_raw: np.ndarray
    sh_basis: np.ndarray

    def splats(self) -> list[Splat2D]:
        return [Splat2D(self.mean2d[i].copy(), self.cov2d[i].copy(), float(self.depth[i]),
                        self.color[i].copy(), float(self.opacity[i]), int(i)) for i in self.order]


@dataclass
class RenderContext:
    projection: Projection
    tile_ptr: np.ndarray
    tile_ids: np.ndarray
    n_tx: int
    raw_image: np.ndarray
    t_final: np.ndarray
    n_contrib: np.ndarray
    background: np.ndarray
    splat_arrays: tuple

    def blend_weight_sum(self) -> np.ndarray:
        """Per-pixel sum of compositing weights, ``1 - final transmittance`` by construction."""
        return 1.0 - self.t_final


@dataclass
class GradBuffer:
    positions: np.ndarray
    rotations: np.ndarray
    log_scales: np.ndarray
    opacity_logits: np.ndarray
    sh: np.ndarray

    def items(self):
        return [(n, getattr(self, n)) for n in GaussianCloud.PARAM_NAMES]

    def __len__(self) -> int:
        return self.positions.shape[0]

    @classmethod
    def zeros_like(cls, cloud: GaussianCloud) -> "GradBuffer":
        return cls(*(np.zeros_like(a) for _, a in cloud.params().items()))

    def add_(self, other: "GradBuffer") -> None:
        for name, arr in self.items():
            arr += getattr(other, name)

    def check_finite(self) -> None:
        for name, arr in self.items():
            flat = arr.reshape(arr.shape[0], -1)
            bad = ~np.isfinite(flat).all(axis=1)
            if bad.any():
                raise GradientError(int(np.flatnonzero(bad)[0]), name)


def _quat_to_rot(q):
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    r = np.empty((q.shape[0], 3, 3), dtype=q.dtype)
    r[:, 0, 0] = 1 - 2 * (y * y + z * z)
    r[:, 0, 1] = 2 * (x * y - w * z)
    r[:, 0, 2] = 2 * (x * z + w * y)
    r[:, 1, 0] = 2 * (x * y + w * z)
    r[:, 1, 1] = 1 - 2 * (x * x + z * z)
    r[:, 1, 2] = 2 * (y * z - w * x)
    r[:, 2, 0] = 2 * (x * z - w * y)
    r[:, 2, 1] = 2 * (y * z + w * x)
    r[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return r


def _rot_grad_to_quat(g, q):
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    gw = 2 * (-z * g[:, 0, 1] + y * g[:, 0, 2] + z * g[:, 1, 0] - x * g[:, 1, 2] - y * g[:, 2, 0] + x * g[:, 2, 1])
    gx = 2 * (y * g[:, 0, 1] + z * g[:, 0, 2] + y * g[:, 1, 0] - 2 * x * g[:, 1, 1] - w * g[:, 1, 2]
              + z * g[:, 2, 0] + w * g[:, 2, 1] - 2 * x * g[:, 2, 2])
    gy = 2 * (-2 * y * g[:, 0, 0] + x * g[:, 0, 1] + w * g[:, 0, 2] + x * g[:, 1, 0] + z * g[:, 1, 2]
              - w * g[:, 2, 0] + z * g[:, 2, 1] - 2 * y * g[:, 2, 2])
    gz = 2 * (-2 * z * g[:, 0, 0] - w * g[:, 0, 1] + x * g[:, 0, 2] + w * g[:, 1, 0] - 2 * z * g[:, 1, 1]
              + y * g[:, 1, 2] + x * g[:, 2, 0] + y * g[:, 2, 1])
    return np.stack([gw, gx, gy, gz], axis=1)


def project(cloud: GaussianCloud, camera: Camera) -> Projection:
    """Screen-space splats for every Gaussian (EWA first-order covariance propagation)."""
    dtype = cloud.dtype
    n = len(cloud)
    w2c, t2c = camera.world_to_camera()
    w2c = w2c.astype(dtype)
    pcam = cloud.positions @ w2c.T + t2c.astype(dtype)
    z = pcam[:, 2]
    front = z > camera.near
    zs = np.where(front, z, 1.0)
    x, y = pcam[:, 0], pcam[:, 1]
    mean2d = np.stack([camera.fx * x / zs + camera.cx, camera.fy * y / zs + camera.cy], axis=1)

    qnorm = np.linalg.norm(cloud.rotations, axis=1)
    qhat = cloud.rotations / np.maximum(qnorm, 1e-12)[:, None]
    rot = _quat_to_rot(qhat)
    scale = np.exp(cloud.log_scales)
    m = rot * scale[:, None, :]
    cov3d = m @ m.transpose(0, 2, 1)

    jac = np.zeros((n, 2, 3), dtype=dtype)
    jac[:, 0, 0] = camera.fx / zs
    jac[:, 0, 2] = -camera.fx * x / (zs * zs)
    jac[:, 1, 1] = camera.fy / zs
    jac[:, 1, 2] = -camera.fy * y / (zs * zs)
    jw = jac @ w2c
    cov2d = jw @ cov3d @ jw.transpose(0, 2, 1)
    cov2d[:, 0, 0] += LOWPASS
    cov2d[:, 1, 1] += LOWPASS
    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    det = a * c - b * b
    conic = np.stack([c / det, -b / det, a / det], axis=1)

    lam = 0.5 * (a + c) + np.sqrt((0.5 * (a - c)) ** 2 + b * b)
    radius = CULL_SIGMA * np.sqrt(lam)
    bbox = np.stack([
        np.ceil(mean2d[:, 0] - radius - 0.5), np.floor(mean2d[:, 0] + radius - 0.5),
        np.ceil(mean2d[:, 1] - radius - 0.5), np.floor(mean2d[:, 1] + radius - 0.5),
    ], axis=1)
    bbox = np.nan_to_num(bbox, nan=-1.0, posinf=1e9, neginf=-1e9)
    onscreen = (bbox[:, 1] >= 0) & (bbox[:, 0] <= camera.width - 1) & (bbox[:, 3] >= 0) & (bbox[:, 2] <= camera.height - 1)
    bbox[:, 0:2] = np.clip(bbox[:, 0:2], 0, camera.width - 1)
    bbox[:, 2:4] = np.clip(bbox[:, 2:4], 0, camera.height - 1)
    bbox = bbox.astype(np.int64)
    visible = front & onscreen & (det > 0)

    diff = cloud.positions - camera.center.astype(dtype)
    dir_norm = np.linalg.norm(diff, axis=1)
    dirs = diff / np.maximum(dir_norm, 1e-12)[:, None]
    basis = sh.basis(dirs, cloud.sh_degree)
    color_raw = np.einsum("nk,nkc->nc", basis, cloud.sh) + sh.COLOR_OFFSET
    color = np.maximum(color_raw, 0.0)

    opacity = 1.0 / (1.0 + np.exp(-cloud.opacity_logits))
    idx = np.flatnonzero(visible)
    order = idx[np.argsort(z[idx], kind="stable")]
    return Projection(visible, order, mean2d, cov2d, conic, z, opacity, color, bbox,
                      pcam, jw, cov3d, rot, qhat, qnorm, scale, dirs, dir_norm, color_raw, basis)


def _prepare(proj: Projection, camera: Camera):
    o = proj.order
    n_tx = (camera.width + TILE - 1) // TILE
    n_ty = (camera.height + TILE - 1) // TILE
    bbox = np.ascontiguousarray(proj.bbox[o])
    ptr, ids = _raster.bin_tiles(bbox, TILE, n_tx, n_ty)
    arrays = (bbox, np.ascontiguousarray(proj.mean2d[o]), np.ascontiguousarray(proj.conic[o]),
              np.ascontiguousarray(proj.opacity[o]), np.ascontiguousarray(proj.color[o]))
    return n_tx, ptr, ids, arrays


def render(cloud: GaussianCloud, camera: Camera, background=(0.0, 0.0, 0.0), *,
           parallel: bool = False, return_context: bool = False):
    """Composite the cloud into an ``(H, W, 3)`` image clamped to ``[0, 1]``."""
    dtype = cloud.dtype
    bg = np.asarray(background, dtype=dtype).reshape(3)
    proj = project(cloud, camera)
    n_tx, ptr, ids, arrays = _prepare(proj, camera)
    h, w = camera.height, camera.width
    raw = np.empty((h, w, 3), dtype=dtype)
    t_final = np.empty((h, w), dtype=np.float64)
    n_contrib = np.empty((h, w), dtype=np.int64)
    kernel = _raster.forward_parallel if parallel else _raster.forward_serial
    kernel(w, h, TILE, n_tx, ptr, ids, *arrays, bg, raw, t_final, n_contrib)
    image = np.clip(raw, 0.0, 1.0)
    if return_context:
        return image, RenderContext(proj, ptr, ids, n_tx, raw, t_final, n_contrib, bg, arrays)
    return image


def render_backward(cloud: GaussianCloud, camera: Camera, background, grad_image: np.ndarray, *,
                    context: RenderContext | None = None, parallel: bool = False) -> GradBuffer:
    """Gradient of ``sum(grad_image * render(...))`` w.r.t. every cloud parameter."""
    if context is None:
        _, context = render(cloud, camera, background, parallel=parallel, return_context=True)
    proj = context.projection
    dtype = cloud.dtype
    n = len(cloud)
    grads = GradBuffer.zeros_like(cloud)
    o = proj.order
    if n == 0 or o.size == 0 or not np.any(grad_image):
        return grads

    ids = context.tile_ids
    counts = np.diff(context.tile_ptr)
    max_list = int(counts.max()) if counts.size else 0
    partial = np.zeros((ids.shape[0], 9))
    kernel = _raster.backward_parallel if parallel else _raster.backward_serial
    kernel(camera.width, camera.height, TILE, context.n_tx, context.tile_ptr, context.tile_ids,
           *context.splat_arrays, context.background, np.ascontiguousarray(grad_image, dtype=np.float64),
           max(max_list, 1), partial)
    per_splat = _raster.reduce_partials(ids, partial, o.size)

    g_mean = np.zeros((n, 2))
    g_conic = np.zeros((n, 3))
    g_opac = np.zeros(n)
    g_color = np.zeros((n, 3))
    g_mean[o] = per_splat[:, 0:2]
    g_conic[o] = per_splat[:, 2:5]
    g_opac[o] = per_splat[:, 5]
    g_color[o] = per_splat[:, 6:9]
    _chain(cloud, camera, proj, g_mean, g_conic, g_opac, g_color, grads)
    for name, arr in grads.items():
        arr[...] = arr.astype(dtype)
    grads.check_finite()
    return grads


def _chain(cloud, camera, proj, g_mean, g_conic, g_opac, g_color, grads):
    vis = proj.visible
    w2c, _ = camera.world_to_camera()

    # opacity
    op = proj.opacity
    grads.opacity_logits[:] = g_opac * op * (1 - op)

    # color -> SH coefficients and view direction
    g_raw = g_color * (proj.color_raw > 0)
    grads.sh[:] = proj.sh_basis[:, :, None] * g_raw[:, None, :]
    g_pos = np.zeros((len(cloud), 3))
    if cloud.sh_degree > 0:
        db = sh.basis_grad(proj.dirs, cloud.sh_degree)  # (N, K, 3)
        g_basis = np.einsum("nkc,nc->nk", cloud.sh, g_raw)
        g_dir = np.einsum("nk,nkd->nd", g_basis, db)
        d = proj.dirs
        g_pos += (g_dir - d * np.sum(d * g_dir, axis=1, keepdims=True)) / proj.dir_norm[:, None]

    # conic -> 2D covariance (symmetric matrix calculus)
    a, b = g_conic[:, 0], g_conic[:, 1]
    g_q = np.zeros((len(cloud), 2, 2))
    g_q[:, 0, 0] = a
    g_q[:, 0, 1] = g_q[:, 1, 0] = 0.5 * b
    g_q[:, 1, 1] = g_conic[:, 2]
    cov2d = proj.cov2d.astype(np.float64)
    q = np.zeros_like(cov2d)
    q[vis] = np.linalg.inv(cov2d[vis])
    g_s2 = -q @ g_q @ q

    jw = proj.jw.astype(np.float64)
    cov3d = proj.cov3d.astype(np.float64)
    g_jw = 2.0 * g_s2 @ jw @ cov3d
    g_cov3d = jw.transpose(0, 2, 1) @ g_s2 @ jw

    # covariance = M M^T with M = R diag(s)
    rot = proj.rot.astype(np.float64)
    scale = proj.scale.astype(np.float64)
    mmat = rot * scale[:, None, :]
    g_m = 2.0 * g_cov3d @ mmat
    g_rot = g_m * scale[:, None, :]
    g_scale = np.sum(g_m * rot, axis=1)
    grads.log_scales[:] = g_scale * scale
    g_qhat = _rot_grad_to_quat(g_rot, proj.qhat.astype(np.float64))
    qh = proj.qhat.astype(np.float64)
    grads.rotations[:] = (g_qhat - qh * np.sum(qh * g_qhat, axis=1, keepdims=True)) / proj.qnorm[:, None]

    # projection Jacobian and mean2d -> camera-space position
    g_j = g_jw @ w2c.T
    pc = proj.pcam.astype(np.float64)
    x, y = pc[:, 0], pc[:, 1]
    z = np.where(vis, pc[:, 2], 1.0)
    fx, fy = camera.fx, camera.fy
    g_pc = np.zeros((len(cloud), 3))
    g_pc[:, 0] = g_mean[:, 0] * fx / z - g_j[:, 0, 2] * fx / z**2
    g_pc[:, 1] = g_mean[:, 1] * fy / z - g_j[:, 1, 2] * fy / z**2
    g_pc[:, 2] = (-g_mean[:, 0] * fx * x / z**2 - g_mean[:, 1] * fy * y / z**2
                  - g_j[:, 0, 0] * fx / z**2 + g_j[:, 0, 2] * 2 * fx * x / z**3
                  - g_j[:, 1, 1] * fy / z**2 + g_j[:, 1, 2] * 2 * fy * y / z**3)
    g_pos += g_pc @ w2c
    grads.positions[:] = g_pos
    for arr in (grads.positions, grads.rotations, grads.log_scales):
        arr[~vis] = 0.0
    grads.opacity_logits[~vis] = 0.0
    grads.sh[~vis] = 0.0


# ---------------------------------------------------------------------------
# image files

def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.floor(np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def write_ppm(path, image: np.ndarray) -> None:
    """Binary P6, maxval 255."""
    data = to_uint8(image)
    h, w, _ = data.shape
    with open(Path(path), "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_ppm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while not raw[end:end + 1].isspace():
            end += 1
        tokens.append(raw[pos:end])
        pos = end
    if tokens[0] != b"P6" or tokens[3] != b"255":
        raise ValueError(f"{path}: not a P6/255 PPM")
    w, h = int(tokens[1]), int(tokens[2])
    data = np.frombuffer(raw[pos + 1:pos + 1 + w * h * 3], dtype=np.uint8)
    return data.reshape(h, w, 3).astype(np.float64) / 255.0
