import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from splatfix.posemath import (Pose, matrix_to_quat, pose_distance, progress, quat_from_axis_angle,
                               quat_to_matrix, rot_distance, shift, slerp)

Z = (0.0, 0.0, 1.0)
IDENT = np.array([1.0, 0.0, 0.0, 0.0])

quats = st.lists(st.floats(-1, 1, allow_nan=False), min_size=4, max_size=4).filter(
    lambda v: np.linalg.norm(v) > 1e-3).map(lambda v: np.asarray(v) / np.linalg.norm(v))
taus = st.floats(0.0, 1.0)


def same_rotation(q1, q2, tol=1e-9):
    return min(np.abs(q1 - q2).max(), np.abs(q1 + q2).max()) < tol


# examples with hand-evaluated values

def test_rot_distance_examples():
    assert rot_distance(IDENT, IDENT) == 0.0
    assert rot_distance(IDENT, quat_from_axis_angle(Z, math.pi)) == pytest.approx(math.pi, abs=1e-12)
    assert rot_distance(IDENT, quat_from_axis_angle(Z, math.pi / 2)) == pytest.approx(math.pi / 2, abs=1e-12)


def test_rot_distance_clamps_rounding():
    q = np.array([1.0 + 1e-12, 0, 0, 0])
    assert rot_distance(q, q) == 0.0


def test_pose_distance_examples():
    p = Pose(IDENT, (0, 0, 0))
    assert pose_distance(p, p) == 0.0
    assert pose_distance(p, Pose(IDENT, (2, 0, 0))) == pytest.approx(1.0, abs=1e-12)
    assert pose_distance(p, Pose(quat_from_axis_angle(Z, math.pi), (0, 0, 0))) == pytest.approx(math.pi / 2,
                                                                                               abs=1e-12)


def test_slerp_examples():
    q90 = quat_from_axis_angle(Z, math.pi / 2)
    assert np.array_equal(slerp(IDENT, q90, 0.0), IDENT)
    assert np.allclose(slerp(IDENT, q90, 1.0), q90, atol=1e-15)
    assert np.allclose(slerp(IDENT, q90, 0.5), quat_from_axis_angle(Z, math.pi / 4), atol=1e-12)


def test_slerp_takes_short_arc():
    q = quat_from_axis_angle(Z, 0.4)
    mid = slerp(IDENT, -q, 0.5)
    assert same_rotation(mid, quat_from_axis_angle(Z, 0.2))


def test_slerp_nearly_equal_falls_back_to_lerp():
    q = quat_from_axis_angle(Z, 1e-9)
    out = slerp(IDENT, q, 0.5)
    assert np.all(np.isfinite(out))
    assert np.linalg.norm(out) == pytest.approx(1.0, abs=1e-12)


def test_shift_examples():
    a = Pose(IDENT, (0, 0, 0))
    b = Pose(quat_from_axis_angle(Z, 1.0), (2, 0, 0))
    assert shift(a, b, 0.0) == a
    assert shift(a, b, 1.0) == b
    assert np.allclose(shift(a, b, 0.5).translation, (1, 0, 0))


def test_progress_mapping():
    assert progress(0, 6) == 0.0
    assert progress(3, 6) == 0.5
    assert progress(6, 6) == 1.0
    assert progress(9, 6) == 1.0
    assert progress(1, 0) == 1.0


# conventions

def test_look_at_axes():
    p = Pose.look_at((0, -3, 0), (0, 0, 0))
    r = p.rotation_matrix
    assert np.allclose(r[:, 2], (0, 1, 0))  # forward
    assert np.allclose(r[:, 1], (0, 0, -1))  # image down is world down
    assert np.allclose(r.T @ r, np.eye(3), atol=1e-12)


def test_pose_matrix_orthonormal_and_roundtrip():
    q = quat_from_axis_angle((1, 2, 3), 0.7)
    p = Pose(q, (1, 2, 3))
    m = p.matrix()
    assert np.allclose(m[:3, :3].T @ m[:3, :3], np.eye(3), atol=1e-12)
    back = Pose.from_matrix(m)
    assert same_rotation(back.rotation, p.rotation)
    assert np.allclose(back.translation, p.translation)


def test_pose_normalizes_rotation():
    p = Pose(np.array([2.0, 0, 0, 0]), (0, 0, 0))
    assert np.linalg.norm(p.rotation) == pytest.approx(1.0, abs=1e-12)


# properties

@given(quats, quats)
def test_rot_distance_symmetric_and_sign_invariant(q1, q2):
    d = rot_distance(q1, q2)
    assert 0.0 <= d <= math.pi + 1e-12
    assert d == pytest.approx(rot_distance(q2, q1), abs=1e-12)
    assert d == pytest.approx(rot_distance(q1, -q2), abs=1e-12)
    assert rot_distance(q1, -q1) == pytest.approx(0.0, abs=2e-7)


@settings(max_examples=1000)
@given(quats, quats, taus)
def test_slerp_unit_norm(q1, q2, tau):
    assert abs(np.linalg.norm(slerp(q1, q2, tau)) - 1.0) < 1e-6


@given(quats, quats, st.floats(0.05, 0.95))
def test_slerp_constant_angular_velocity(q1, q2, tau):
    total = rot_distance(q1, q2)
    part = rot_distance(q1, slerp(q1, q2, tau))
    assert part == pytest.approx(tau * total, abs=1e-6)


@given(quats, st.lists(st.floats(-5, 5), min_size=3, max_size=3), st.floats(1e-3, 1.0))
def test_pose_distance_positive_for_perturbation(q, t, eps):
    p = Pose(q, t)
    assert pose_distance(p, p) == 0.0
    moved = Pose(q, np.asarray(t) + [eps, 0, 0])
    assert pose_distance(p, moved) > 0.0
    turned = Pose(slerp(q, -q if q[0] < 0 else q, 1.0), t)
    assert pose_distance(p, turned) == pytest.approx(0.0, abs=2e-7)


@given(quats, quats, taus)
def test_shift_continuous(q1, q2, tau):
    a = Pose(q1, (0, 0, 0))
    b = Pose(q2, (1, -2, 0.5))
    tau = min(tau, 1.0 - 1e-6)
    s1, s2 = shift(a, b, tau), shift(a, b, tau + 1e-6)
    assert np.linalg.norm(s1.translation - s2.translation) < 1e-5
    assert rot_distance(s1.rotation, s2.rotation) < 1e-4


@given(quats)
def test_matrix_quat_roundtrip(q):
    assert same_rotation(matrix_to_quat(quat_to_matrix(q)), q, 1e-7)
