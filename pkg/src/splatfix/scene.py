"""Gaussian clouds, cameras, synthetic ground-truth scenes and their text formats."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import sh
from .posemath import Pose, quat_to_matrix

FORMAT_VERSION = 1


class CloudFormatError(ValueError):
    """Raised for malformed ``.gsc`` / ``.cam`` files; carries the offending location."""

    def __init__(self, path, line: int, message: str, field_name: str | None = None):
        where = f"{path}:{line}"
        if field_name is not None:
            where += f" (field {field_name})"
        super().__init__(f"{where}: {message}")
        self.path = str(path)
        self.line = line
        self.field = field_name


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


@dataclass
class Gaussian:
    """A single 3D Gaussian in its optimization parameterization."""

    position: np.ndarray
    rotation: np.ndarray
    log_scale: np.ndarray
    opacity_logit: float
    sh_coeffs: np.ndarray  # (K, 3)

    @property
    def scale(self) -> np.ndarray:
        return np.exp(self.log_scale)

    @property
    def opacity(self) -> float:
        return float(_sigmoid(self.opacity_logit))


def covariance(g: Gaussian) -> np.ndarray:
    """World-space covariance ``R S S^T R^T``."""
    r = quat_to_matrix(g.rotation)
    m = r * np.exp(np.asarray(g.log_scale, dtype=np.float64))[None, :]
    cov = m @ m.T
    return 0.5 * (cov + cov.T)


def eval_gaussian(g: Gaussian, x) -> float:
    d = np.asarray(x, dtype=np.float64) - np.asarray(g.position, dtype=np.float64)
    return float(np.exp(-0.5 * d @ np.linalg.solve(covariance(g), d)))


@dataclass
class GaussianCloud:
    """Structure-of-arrays container for N Gaussians.

    ``sh`` has shape ``(N, K, 3)`` with ``K = (sh_degree + 1) ** 2``.
    """

    positions: np.ndarray
    rotations: np.ndarray
    log_scales: np.ndarray
    opacity_logits: np.ndarray
    sh: np.ndarray
    sh_degree: int = 1

    PARAM_NAMES = ("positions", "rotations", "log_scales", "opacity_logits", "sh")

    def __post_init__(self):
        n = self.positions.shape[0]
        k = sh.num_coeffs(self.sh_degree)
        expected = {
            "positions": (n, 3), "rotations": (n, 4), "log_scales": (n, 3),
            "opacity_logits": (n,), "sh": (n, k, 3),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")

    @classmethod
    def empty(cls, sh_degree: int = 1, dtype=np.float64) -> "GaussianCloud":
        k = sh.num_coeffs(sh_degree)
        return cls(np.zeros((0, 3), dtype), np.zeros((0, 4), dtype), np.zeros((0, 3), dtype),
                   np.zeros((0,), dtype), np.zeros((0, k, 3), dtype), sh_degree)

    @classmethod
    def from_gaussians(cls, gaussians, sh_degree: int = 1) -> "GaussianCloud":
        gaussians = list(gaussians)
        if not gaussians:
            return cls.empty(sh_degree)
        return cls(
            np.array([g.position for g in gaussians], dtype=np.float64),
            np.array([g.rotation for g in gaussians], dtype=np.float64),
            np.array([g.log_scale for g in gaussians], dtype=np.float64),
            np.array([g.opacity_logit for g in gaussians], dtype=np.float64),
            np.array([g.sh_coeffs for g in gaussians], dtype=np.float64),
            sh_degree,
        )

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def dtype(self):
        return self.positions.dtype

    def gaussian(self, i: int) -> Gaussian:
        return Gaussian(self.positions[i].copy(), self.rotations[i].copy(), self.log_scales[i].copy(),
                        float(self.opacity_logits[i]), self.sh[i].copy())

    def params(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.PARAM_NAMES}

    def copy(self) -> "GaussianCloud":
        return GaussianCloud(*(getattr(self, n).copy() for n in self.PARAM_NAMES), self.sh_degree)

    def astype(self, dtype) -> "GaussianCloud":
        return GaussianCloud(*(getattr(self, n).astype(dtype) for n in self.PARAM_NAMES), self.sh_degree)

    def subset(self, index) -> "GaussianCloud":
        return GaussianCloud(*(getattr(self, n)[index].copy() for n in self.PARAM_NAMES), self.sh_degree)

    def normalize_rotations(self) -> None:
        norms = np.linalg.norm(self.rotations, axis=1, keepdims=True)
        self.rotations /= np.maximum(norms, 1e-12)

    @property
    def opacities(self) -> np.ndarray:
        return _sigmoid(self.opacity_logits)

    def equals(self, other: "GaussianCloud") -> bool:
        return self.sh_degree == other.sh_degree and all(
            np.array_equal(getattr(self, n), getattr(other, n)) for n in self.PARAM_NAMES)


@dataclass(frozen=True, eq=False)
class Camera:
    """Pinhole camera; pixel ``(u, v)`` has its center at ``(u + 0.5, v + 0.5)``."""

    pose: Pose
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    near: float = 0.1
    far: float = 100.0

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 < self.near < self.far):
            raise ValueError("need 0 < near < far")
        if self.width < 8 or self.height < 8:
            raise ValueError("image must be at least 8x8")

    @classmethod
    def from_fov(cls, pose: Pose, width: int, height: int, fov_deg: float, **kw) -> "Camera":
        f = 0.5 * width / math.tan(math.radians(fov_deg) / 2)
        return cls(pose, f, f, width / 2, height / 2, width, height, **kw)

    @property
    def intrinsics(self) -> np.ndarray:
        return np.array([[self.fx, 0, self.cx], [0, self.fy, self.cy], [0, 0, 1.0]])

    @property
    def center(self) -> np.ndarray:
        return self.pose.translation

    def world_to_camera(self) -> tuple[np.ndarray, np.ndarray]:
        """``(W, t)`` with ``x_cam = W @ x_world + t``."""
        r = self.pose.rotation_matrix
        return r.T, -r.T @ self.pose.translation

    def project_points(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Pixel coordinates and depths of world points ``(N, 3)``."""
        w, t = self.world_to_camera()
        pc = np.asarray(points, dtype=np.float64) @ w.T + t
        z = pc[:, 2]
        uv = np.stack([self.fx * pc[:, 0] / z + self.cx, self.fy * pc[:, 1] / z + self.cy], axis=1)
        return uv, z

    def with_pose(self, pose: Pose) -> "Camera":
        return replace(self, pose=pose)

    def key(self) -> tuple:
        return (self.pose.rotation.tobytes(), self.pose.translation.tobytes(), self.fx, self.fy,
                self.cx, self.cy, self.width, self.height, self.near, self.far)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Camera):
            return NotImplemented
        return self.key() == other.key()

    def __hash__(self) -> int:
        return hash(self.key())


@dataclass
class SceneSpec:
    """Synthetic scene generator settings."""

    n_gaussians: int = 50
    extent: float = 1.0
    ring_radius: float = 3.5
    elevation_deg: float = 20.0
    n_train: int = 3
    n_test: int = 8
    n_extra_interp: int = 1
    n_far: int = 2
    far_elevation_deg: float = 60.0
    far_distance_scale: float = 0.6  # far views sit at this fraction of the ring radius
    camera_jitter_deg: float = 4.0
    width: int = 64
    height: int = 64
    fov_deg: float = 50.0
    sh_degree: int = 1
    scale_min: float = 0.08
    scale_max: float = 0.25
    opacity_min: float = 0.5
    opacity_max: float = 0.95
    view_dependence: float = 0.15

    def validate(self) -> None:
        if self.n_gaussians < 1:
            raise ValueError("n_gaussians must be >= 1")
        if self.n_train < 1 or self.n_test < 1:
            raise ValueError("scene needs at least one train and one test camera")
        if self.n_extra_interp < 0 or self.n_far < 0:
            raise ValueError("extra view counts must be >= 0")
        if self.n_far > self.n_train:
            raise ValueError("n_far cannot exceed n_train")
        if self.extent <= 0 or self.ring_radius <= self.extent:
            raise ValueError("ring_radius must exceed the scene extent")
        if self.ring_radius * self.far_distance_scale <= self.extent:
            raise ValueError("far views must stay outside the scene extent")
        sh.num_coeffs(self.sh_degree)


@dataclass
class SyntheticScene:
    ground_truth: GaussianCloud
    train_cams: list
    extra_cams: list
    test_cams: list
    seed: int
    far_extra: list = field(default_factory=list)  # indices into extra_cams
    spec: SceneSpec = field(default_factory=SceneSpec)

    @property
    def center(self) -> np.ndarray:
        return self.ground_truth.positions.mean(axis=0) if len(self.ground_truth) else np.zeros(3)

    @property
    def extent(self) -> float:
        return self.spec.extent

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        p = self.ground_truth.positions
        return p.min(axis=0), p.max(axis=0)


def _random_quats(rng, n):
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    q[q[:, 0] < 0] *= -1
    return q


def _ring_camera(spec: SceneSpec, center, azimuth_deg, elevation_deg, radius_scale=1.0) -> Camera:
    az, el = math.radians(azimuth_deg), math.radians(elevation_deg)
    offset = radius_scale * spec.ring_radius * np.array([math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)])
    return Camera.from_fov(Pose.look_at(center + offset, center), spec.width, spec.height, spec.fov_deg)


def generate_scene(spec: SceneSpec | None = None, seed: int = 0) -> SyntheticScene:
    """Random Gaussian blob scene viewed from a camera ring.

    Train views are evenly spaced in azimuth; extra views sit between consecutive
    train views (``n_extra_interp`` per gap) plus ``n_far`` steeply elevated views
    over the first gaps; test views are offset half a step from an even ``n_test`` ring.
    """
    spec = spec or SceneSpec()
    spec.validate()
    rng = np.random.default_rng(seed)
    n = spec.n_gaussians

    # uniform in a ball of radius 0.8 * extent
    dirs = rng.normal(size=(n, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    radii = 0.8 * spec.extent * rng.uniform(size=n) ** (1 / 3)
    positions = dirs * radii[:, None]
    log_scales = np.log(spec.extent * rng.uniform(spec.scale_min, spec.scale_max, size=(n, 3)))
    opacity_logits = _logit(rng.uniform(spec.opacity_min, spec.opacity_max, size=n))
    k = sh.num_coeffs(spec.sh_degree)
    coeffs = np.zeros((n, k, 3))
    coeffs[:, 0, :] = sh.rgb_to_dc(rng.uniform(0.1, 0.9, size=(n, 3)))
    if k > 1:
        coeffs[:, 1:, :] = rng.normal(scale=spec.view_dependence, size=(n, k - 1, 3))
    gt = GaussianCloud(positions, _random_quats(rng, n), log_scales, opacity_logits, coeffs, spec.sh_degree)
    center = positions.mean(axis=0)

    def jitter():
        return rng.uniform(-spec.camera_jitter_deg, spec.camera_jitter_deg)

    step = 360.0 / spec.n_train
    train = [_ring_camera(spec, center, i * step + jitter(), spec.elevation_deg) for i in range(spec.n_train)]
    extra, far = [], []
    for i in range(spec.n_train):
        for j in range(spec.n_extra_interp):
            az = (i + (j + 1) / (spec.n_extra_interp + 1)) * step
            extra.append(_ring_camera(spec, center, az + jitter(), spec.elevation_deg))
    for i in range(spec.n_far):
        far.append(len(extra))
        extra.append(_ring_camera(spec, center, (i + 0.5) * step + jitter(), spec.far_elevation_deg,
                                  spec.far_distance_scale))
    test_step = 360.0 / spec.n_test
    test = [_ring_camera(spec, center, (i + 0.5) * test_step + jitter(), spec.elevation_deg + 0.5 * jitter())
            for i in range(spec.n_test)]

    all_cams = train + extra + test
    for a in range(len(all_cams)):
        for b in range(a + 1, len(all_cams)):
            if all_cams[a].pose == all_cams[b].pose:
                raise ValueError("generated camera sets are not disjoint")
    return SyntheticScene(gt, train, extra, test, seed, far, spec)


@dataclass
class InitSpec:
    """Starting cloud settings (``noisy-subset`` perturbs the ground truth, ``random`` ignores it)."""

    mode: str = "noisy-subset"
    keep_fraction: float = 1.0
    position_noise: float = 0.15
    scale_noise: float = 0.2
    color_noise: float = 0.6
    count: int = 0  # random mode; 0 = ground-truth count


def init_cloud(scene: SyntheticScene, spec: InitSpec | None = None, seed: int = 0) -> GaussianCloud:
    spec = spec or InitSpec()
    rng = np.random.default_rng(seed)
    gt = scene.ground_truth
    if spec.mode == "noisy-subset":
        n_keep = int(round(spec.keep_fraction * len(gt)))
        idx = np.sort(rng.choice(len(gt), size=n_keep, replace=False))
        cloud = gt.subset(idx)
        if spec.position_noise > 0:
            cloud.positions += rng.normal(scale=spec.position_noise, size=cloud.positions.shape)
        if spec.scale_noise > 0:
            cloud.log_scales += rng.normal(scale=spec.scale_noise, size=cloud.log_scales.shape)
        if spec.color_noise > 0:
            random_dc = sh.rgb_to_dc(rng.uniform(0.1, 0.9, size=(n_keep, 3)))
            cloud.sh[:, 0, :] = (1 - spec.color_noise) * cloud.sh[:, 0, :] + spec.color_noise * random_dc
            cloud.sh[:, 1:, :] *= 1 - spec.color_noise
        return cloud
    if spec.mode == "random":
        n = spec.count or len(gt)
        lo, hi = scene.bounds()
        k = sh.num_coeffs(gt.sh_degree)
        coeffs = np.zeros((n, k, 3))
        coeffs[:, 0, :] = sh.rgb_to_dc(rng.uniform(0.1, 0.9, size=(n, 3)))
        return GaussianCloud(
            rng.uniform(lo, hi, size=(n, 3)),
            _random_quats(rng, n),
            np.full((n, 3), math.log(0.1 * scene.extent)),
            np.zeros(n),
            coeffs,
            gt.sh_degree,
        )
    raise ValueError(f"unknown init mode {spec.mode!r}")


# ---------------------------------------------------------------------------
# text formats

def _fmt(v) -> str:
    return repr(float(v))


def save_cloud(path, cloud: GaussianCloud) -> None:
    lines = [f"GSC {FORMAT_VERSION} {cloud.sh_degree}"]
    for i in range(len(cloud)):
        vals = np.concatenate([cloud.positions[i], cloud.rotations[i], cloud.log_scales[i],
                               [cloud.opacity_logits[i]], cloud.sh[i].reshape(-1)])
        lines.append(" ".join(_fmt(v) for v in vals))
    Path(path).write_text("\n".join(lines) + "\n")


def _cloud_field_name(j: int, k: int) -> str:
    if j < 3:
        return f"position[{j}]"
    if j < 7:
        return f"rotation[{j - 3}]"
    if j < 10:
        return f"log_scale[{j - 7}]"
    if j == 10:
        return "opacity_logit"
    c = j - 11
    return f"sh[{c // 3}][{c % 3}]"


def load_cloud(path, dtype=np.float64) -> GaussianCloud:
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines:
        raise CloudFormatError(path, 1, "missing header")
    head = lines[0].split()
    if len(head) != 3 or head[0] != "GSC":
        raise CloudFormatError(path, 1, f"bad header {lines[0]!r}, expected 'GSC <version> <sh_degree>'")
    try:
        version, degree = int(head[1]), int(head[2])
    except ValueError:
        raise CloudFormatError(path, 1, "header version/sh_degree must be integers") from None
    if version != FORMAT_VERSION:
        raise CloudFormatError(path, 1, f"unsupported version {version}")
    try:
        k = sh.num_coeffs(degree)
    except ValueError as exc:
        raise CloudFormatError(path, 1, str(exc), "sh_degree") from None
    width = 11 + 3 * k
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != width:
            raise CloudFormatError(path, lineno, f"expected {width} values, found {len(parts)}")
        row = []
        for j, tok in enumerate(parts):
            try:
                row.append(float(tok))
            except ValueError:
                raise CloudFormatError(path, lineno, f"not a number: {tok!r}", _cloud_field_name(j, k)) from None
        rows.append(row)
    if not rows:
        return GaussianCloud.empty(degree, dtype)
    a = np.array(rows, dtype=np.float64)
    return GaussianCloud(a[:, 0:3], a[:, 3:7], a[:, 7:10], a[:, 10], a[:, 11:].reshape(-1, k, 3), degree).astype(dtype)


def save_cameras(path, cameras) -> None:
    lines = []
    for c in cameras:
        vals = [_fmt(c.fx), _fmt(c.fy), _fmt(c.cx), _fmt(c.cy), str(c.width), str(c.height),
                _fmt(c.near), _fmt(c.far)] + [_fmt(v) for v in c.pose.rotation] + [_fmt(v) for v in c.pose.translation]
        lines.append(" ".join(vals))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


_CAM_FIELDS = ("fx", "fy", "cx", "cy", "W", "H", "near", "far", "qw", "qx", "qy", "qz", "tx", "ty", "tz")


def load_cameras(path) -> list:
    path = Path(path)
    cams = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != len(_CAM_FIELDS):
            raise CloudFormatError(path, lineno, f"expected {len(_CAM_FIELDS)} values, found {len(parts)}")
        vals = []
        for name, tok in zip(_CAM_FIELDS, parts):
            try:
                vals.append(int(tok) if name in ("W", "H") else float(tok))
            except ValueError:
                raise CloudFormatError(path, lineno, f"bad value {tok!r}", name) from None
        try:
            cams.append(Camera(Pose(vals[8:12], vals[12:15]), *vals[:8]))
        except ValueError as exc:
            raise CloudFormatError(path, lineno, str(exc)) from None
    return cams


def save_scene(directory, scene: SyntheticScene) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_cloud(d / "gt.gsc", scene.ground_truth)
    save_cameras(d / "train.cam", scene.train_cams)
    save_cameras(d / "extra.cam", scene.extra_cams)
    save_cameras(d / "test.cam", scene.test_cams)
    meta = [f"seed = {scene.seed}", "far_extra = " + ",".join(str(i) for i in scene.far_extra)]
    meta += [f"{f.name} = {getattr(scene.spec, f.name)}" for f in fields(SceneSpec)]
    (d / "scene.txt").write_text("\n".join(meta) + "\n")


def load_scene(directory) -> SyntheticScene:
    d = Path(directory)
    meta = {}
    for line in (d / "scene.txt").read_text().splitlines():
        if "=" in line:
            key, _, value = line.partition("=")
            meta[key.strip()] = value.strip()
    spec_kw = {}
    for f in fields(SceneSpec):
        if f.name in meta:
            spec_kw[f.name] = type(f.default)(meta[f.name])
    far = [int(v) for v in meta.get("far_extra", "").split(",") if v]
    return SyntheticScene(
        load_cloud(d / "gt.gsc"),
        load_cameras(d / "train.cam"),
        load_cameras(d / "extra.cam"),
        load_cameras(d / "test.cam"),
        int(meta.get("seed", 0)),
        far,
        SceneSpec(**spec_kw),
    )
