import csv
import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from splatfix.ape import ApeConfig, AuditRow, ape_round, nearest_references, write_audit_csv
from splatfix.posemath import Pose, pose_distance, quat_from_axis_angle, shift
from splatfix.prior import Fixer, IdentityFixer, OracleFixer
from splatfix.renderer import render
from splatfix.scene import Camera


def cam_at(x, q=(1.0, 0, 0, 0)):
    return Camera(Pose(np.asarray(q, float), np.array([x, 0.0, 0.0])), 20.0, 20.0, 8, 8, 16, 16)


class ConstantFixer(Fixer):
    """Replaces every render with mid grey, so the gate always sees a large change."""

    def __init__(self):
        self.calls = 0

    def fix(self, degraded, reference, camera=None):
        self.calls += 1
        return np.full_like(degraded, 0.5)


def train_images(scene):
    return [render(scene.ground_truth, c) for c in scene.train_cams]


# -- nearest references ---------------------------------------------------------

def test_equal_camera_comes_first():
    cams = [cam_at(2.0), cam_at(0.0), cam_at(1.0)]
    assert nearest_references(cam_at(0.0), cams, 1) == [1]


def test_colinear_cameras_sorted_by_distance():
    c = cam_at(0.0)
    cams = [cam_at(3.0), cam_at(1.0), cam_at(2.0)]
    brute = sorted(range(3), key=lambda i: pose_distance(cams[i].pose, c.pose))
    assert nearest_references(c, cams, 2) == brute[:2] == [1, 2]


def test_ties_break_by_index():
    cams = [cam_at(-1.0), cam_at(1.0)]
    assert nearest_references(cam_at(0.0), cams, 2) == [0, 1]


def test_too_many_references_warns(caplog):
    cams = [cam_at(1.0), cam_at(2.0)]
    with caplog.at_level(logging.WARNING, logger="splatfix.ape"):
        out = nearest_references(cam_at(0.0), cams, 5)
    assert out == [0, 1]
    assert "only 2 training views" in caplog.text


def test_empty_train_set_raises():
    with pytest.raises(ValueError):
        nearest_references(cam_at(0.0), [], 1)


def test_config_validation():
    ApeConfig().validate()
    for bad in (dict(eta=0), dict(m_refs=0), dict(n_iter=0), dict(augment_weight=-1)):
        with pytest.raises(ValueError):
            ApeConfig(**bad).validate()


# -- rounds -----------------------------------------------------------------------

def test_reliable_views_produce_nothing(small_scene):
    cfg = ApeConfig(enabled=True)
    aug, audit = ape_round(small_scene.ground_truth, small_scene, IdentityFixer(), cfg, 1, 6,
                           train_images(small_scene))
    assert aug == []
    assert len(audit) == len(small_scene.extra_cams)
    assert not any(r.unreliable for r in audit)
    assert all(r.psnr_gate == 99.0 for r in audit)


def test_unreliable_view_yields_m_views(small_scene):
    cfg = ApeConfig(enabled=True, m_refs=3)
    fixer = ConstantFixer()
    aug, audit = ape_round(small_scene.ground_truth, small_scene, fixer, cfg, 1, 6, train_images(small_scene))
    n_extra = len(small_scene.extra_cams)
    assert all(r.unreliable and r.augmented_count == 3 for r in audit)
    assert len(aug) == 3 * n_extra
    assert fixer.calls == 4 * n_extra
    for a in aug:
        assert a.target_image.shape == (a.camera.height, a.camera.width, 3)
        v, r, rnd = a.origin
        assert rnd == 1
        assert r in nearest_references(small_scene.extra_cams[v], small_scene.train_cams, 3)


def test_final_round_shift_is_the_extra_camera(small_scene):
    cfg = ApeConfig(enabled=True, m_refs=2)
    aug, _ = ape_round(small_scene.ground_truth, small_scene, ConstantFixer(), cfg, 6, 6, train_images(small_scene))
    for a in aug:
        assert a.camera.pose == small_scene.extra_cams[a.origin[0]].pose


def test_shifted_views_lie_between_reference_and_target(small_scene):
    cfg = ApeConfig(enabled=True)
    aug, _ = ape_round(small_scene.ground_truth, small_scene, ConstantFixer(), cfg, 2, 6, train_images(small_scene))
    for a in aug:
        v, r, _ = a.origin
        ref, tgt = small_scene.train_cams[r].pose, small_scene.extra_cams[v].pose
        total = pose_distance(ref, tgt)
        assert pose_distance(ref, a.camera.pose) + pose_distance(a.camera.pose, tgt) == pytest.approx(total, rel=0.05)


def test_gate_is_monotone_in_eta(small_scene):
    cloud = small_scene.ground_truth.copy()
    rng = np.random.default_rng(0)
    cloud.positions += rng.normal(scale=0.15, size=cloud.positions.shape)
    fixer = OracleFixer(small_scene, gamma=0.8, knee=-math.inf)
    flagged = []
    for eta in (15, 20, 25, 30):
        _, audit = ape_round(cloud, small_scene, fixer, ApeConfig(enabled=True, eta=eta), 1, 6,
                             train_images(small_scene))
        flagged.append({r.view_id for r in audit if r.unreliable})
    for lo, hi in zip(flagged, flagged[1:]):
        assert lo <= hi


@settings(max_examples=50, deadline=None)
@given(tau=st.floats(0, 1), angle=st.floats(0, 3.0), dx=st.floats(-3, 3), dy=st.floats(-3, 3))
def test_shift_stays_on_the_path(tau, angle, dx, dy):
    a = Pose(np.array([1.0, 0, 0, 0]), np.zeros(3))
    b = Pose(quat_from_axis_angle([0.3, 1.0, 0.2], angle), np.array([dx, dy, 0.5]))
    s = shift(a, b, tau)
    total = pose_distance(a, b)
    assert pose_distance(a, s) + pose_distance(s, b) == pytest.approx(total, rel=0.05, abs=1e-9)


def test_audit_csv(tmp_path):
    rows = [AuditRow(1, 0, 21.23456, True, 3), AuditRow(1, 1, math.inf, False, 0)]
    path = tmp_path / "ape_audit.csv"
    write_audit_csv(path, rows)
    with open(path, newline="") as fh:
        got = list(csv.reader(fh))
    assert got[0] == ["round", "view_id", "psnr_gate", "unreliable", "augmented_count"]
    assert got[1] == ["1", "0", "21.2346", "1", "3"]
    assert got[2] == ["1", "1", "inf", "0", "0"]
