"""Quaternion and rigid-pose arithmetic.

Conventions used across the package:

* quaternions are stored w-first, ``(w, x, y, z)``, as float64 arrays;
* a :class:`Pose` is *world-from-camera*: ``x_world = R @ x_cam + t``.

All functions treat ``q`` and ``-q`` as the same rotation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_LERP_DOT = 1.0 - 1e-6


def normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if n < 1e-12:
        raise ValueError("cannot normalize a zero quaternion")
    if abs(n - 1.0) <= 4e-16:
        return q.copy()  # already unit; keeps repeated normalization exact
    return q / n


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    half = 0.5 * angle
    return np.concatenate([[np.cos(half)], np.sin(half) * axis])


def quat_multiply(q1, q2) -> np.ndarray:
    """Hamilton product ``q1 * q2``."""
    w1, x1, y1, z1 = q1
    w2, x2, y2, z2 = q2
    return np.array([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ])


def quat_to_matrix(q) -> np.ndarray:
    """Rotation matrix of a (not necessarily unit) quaternion."""
    w, x, y, z = normalize(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(m) -> np.ndarray:
    """Quaternion (w >= 0) from a 3x3 rotation matrix (Shepperd's method)."""
    m = np.asarray(m, dtype=np.float64)
    tr = np.trace(m)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = 2.0 * np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
        q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
    elif m[1, 1] > m[2, 2]:
        s = 2.0 * np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
        q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
        q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    q = normalize(q)
    return -q if q[0] < 0 else q


def rot_distance(q1, q2) -> float:
    """Geodesic angle between two rotations, ``2 * arccos(|<q1, q2>|)``, in [0, pi]."""
    q1 = normalize(q1)
    q2 = normalize(q2)
    if np.dot(q1, q2) < 0:
        q2 = -q2
    # half-angle via atan2 of chord lengths; arccos loses precision near 1 and
    # returns ~2e-8 for identical rotations
    return 4.0 * math.atan2(float(np.linalg.norm(q1 - q2)), float(np.linalg.norm(q1 + q2)))


def slerp(q1, q2, tau: float) -> np.ndarray:
    """Shortest-arc spherical interpolation from ``q1`` (tau=0) to ``q2`` (tau=1)."""
    q1 = normalize(q1)
    q2 = normalize(q2)
    if tau <= 0.0:
        return q1
    if tau >= 1.0:
        return q2
    dot = float(np.dot(q1, q2))
    if dot < 0.0:
        q2 = -q2
        dot = -dot
    if dot > _LERP_DOT:
        return normalize((1.0 - tau) * q1 + tau * q2)
    theta = np.arccos(min(1.0, dot))
    s = np.sin(theta)
    out = (np.sin((1.0 - tau) * theta) / s) * q1 + (np.sin(tau * theta) / s) * q2
    return normalize(out)


@dataclass(frozen=True, eq=False)
class Pose:
    """World-from-camera rigid transform."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", normalize(self.rotation))
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    @classmethod
    def from_matrix(cls, m) -> "Pose":
        m = np.asarray(m, dtype=np.float64)
        return cls(matrix_to_quat(m[:3, :3]), m[:3, 3])

    @classmethod
    def look_at(cls, eye, target, up=(0.0, 0.0, 1.0)) -> "Pose":
        """Camera at ``eye`` looking at ``target`` (camera axes: x right, y down, z forward)."""
        eye = np.asarray(eye, dtype=np.float64)
        fwd = np.asarray(target, dtype=np.float64) - eye
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, np.asarray(up, dtype=np.float64))
        if np.linalg.norm(right) < 1e-9:
            right = np.cross(fwd, np.array([0.0, 1.0, 0.0]))
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        return cls(matrix_to_quat(np.stack([right, down, fwd], axis=1)), eye)

    @property
    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation_matrix
        m[:3, 3] = self.translation
        return m

    def __eq__(self, other) -> bool:
        if not isinstance(other, Pose):
            return NotImplemented
        return (np.array_equal(self.rotation, other.rotation)
                and np.array_equal(self.translation, other.translation))

    def __hash__(self) -> int:
        return hash((self.rotation.tobytes(), self.translation.tobytes()))


def pose_distance(p1: Pose, p2: Pose, alpha: float = 0.5, beta: float = 0.5) -> float:
    """Weighted sum of translation distance and rotation angle."""
    dt = float(np.linalg.norm(p1.translation - p2.translation))
    return alpha * dt + beta * rot_distance(p1.rotation, p2.rotation)


def shift(p_train: Pose, p_extra: Pose, tau: float) -> Pose:
    """Interpolate from the training pose (tau=0) to the extra pose (tau=1)."""
    t = (1.0 - tau) * p_train.translation + tau * p_extra.translation
    return Pose(slerp(p_train.rotation, p_extra.rotation, tau), t)


def progress(round_index: int, total_rounds: int) -> float:
    """Map an enhancement round to the interpolation fraction used by :func:`shift`."""
    if total_rounds <= 0:
        return 1.0
    return min(1.0, max(0.0, round_index / total_rounds))
