import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from splatfix.metrics import (PSNR_CAP, fundamental_matrix, gaussian_window, gt_correspondences, psnr,
                              render_correspondences, ssim, ssim_with_grad, symmetric_epipolar_distance, tsed,
                              write_metrics_csv)
from splatfix.posemath import Pose
from splatfix.renderer import render
from splatfix.scene import Camera, SceneSpec, generate_scene


def test_psnr_examples():
    a = np.zeros((8, 8, 3))
    assert psnr(a, np.full_like(a, 0.5)) == pytest.approx(6.0206, abs=1e-4)
    assert psnr(a, np.ones_like(a)) == pytest.approx(0.0, abs=1e-12)
    assert psnr(a, a) == PSNR_CAP
    assert psnr(a, a + 1e-60) == PSNR_CAP


def test_psnr_dimension_mismatch():
    with pytest.raises(ValueError):
        psnr(np.zeros((8, 8, 3)), np.zeros((8, 9, 3)))


def test_ssim_identical_is_one():
    img = np.random.default_rng(0).uniform(size=(20, 20, 3))
    assert ssim(img, img) == pytest.approx(1.0, abs=1e-12)


def test_ssim_constant_images_hand_value():
    # constant images: only the luminance term differs
    c1 = 0.01 ** 2
    x, y = 0.2, 0.8
    expected = (2 * x * y + c1) / (x * x + y * y + c1)
    assert ssim(np.full((16, 16, 3), x), np.full((16, 16, 3), y)) == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(0.470666, abs=1e-6)


def test_ssim_too_small():
    with pytest.raises(ValueError):
        ssim(np.zeros((8, 8, 3)), np.zeros((8, 8, 3)))


def test_gaussian_window():
    w = gaussian_window()
    assert w.size == 11 and w.sum() == pytest.approx(1.0)
    assert np.argmax(w) == 5 and np.allclose(w, w[::-1])


def test_ssim_matches_direct_window_sum():
    """Oracle: explicit per-window statistics with an outer-product Gaussian."""
    rng = np.random.default_rng(3)
    a, b = rng.uniform(size=(14, 13)), rng.uniform(size=(14, 13))
    w1 = gaussian_window()
    w = np.outer(w1, w1)
    vals = []
    for i in range(14 - 10):
        for j in range(13 - 10):
            pa, pb = a[i:i + 11, j:j + 11], b[i:i + 11, j:j + 11]
            ma, mb = (w * pa).sum(), (w * pb).sum()
            va, vb = (w * pa * pa).sum() - ma ** 2, (w * pb * pb).sum() - mb ** 2
            cov = (w * pa * pb).sum() - ma * mb
            c1, c2 = 0.01 ** 2, 0.03 ** 2
            vals.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma ** 2 + mb ** 2 + c1) * (va + vb + c2)))
    assert ssim(a, b) == pytest.approx(np.mean(vals), abs=1e-12)


def test_ssim_gradient_finite_differences():
    rng = np.random.default_rng(4)
    a, b = rng.uniform(size=(12, 13, 3)), rng.uniform(size=(12, 13, 3))
    s, g = ssim_with_grad(a, b)
    assert s == pytest.approx(ssim(a, b))
    h = 1e-6
    for idx in [(0, 0, 0), (5, 6, 1), (11, 12, 2), (3, 9, 0)]:
        a[idx] += h
        fp = ssim(a, b)
        a[idx] -= 2 * h
        fm = ssim(a, b)
        a[idx] += h
        assert g[idx] == pytest.approx((fp - fm) / (2 * h), abs=1e-8)


@given(st.floats(0, 1), st.floats(0, 1))
def test_psnr_symmetric(x, y):
    a, b = np.full((4, 4, 3), x), np.full((4, 4, 3), y)
    assert psnr(a, b) == psnr(b, a)
    assert psnr(a, b) <= PSNR_CAP


# epipolar geometry

def two_cameras():
    c1 = Camera.from_fov(Pose.look_at((0, -3, 0.5), (0, 0, 0)), 64, 48, 50)
    c2 = Camera.from_fov(Pose.look_at((1.5, -2.5, 0.8), (0, 0, 0)), 64, 48, 50)
    return c1, c2


def test_fundamental_annihilates_true_correspondences():
    c1, c2 = two_cameras()
    pts = np.random.default_rng(0).uniform(-0.5, 0.5, size=(30, 3))
    x1, x2 = gt_correspondences(c1, c2, pts)
    assert len(x1) == 30
    f = fundamental_matrix(c1, c2)
    h1 = np.column_stack([x1, np.ones(30)])
    h2 = np.column_stack([x2, np.ones(30)])
    assert np.abs(np.sum(h2 * (h1 @ f.T), axis=1)).max() < 1e-9
    assert symmetric_epipolar_distance(f, x1, x2).max() < 1e-9
    assert tsed([(c1, c2)], [(x1, x2)], 2.0) == 1.0


def test_symmetric_distance_of_offset_point():
    c1, c2 = two_cameras()
    pts = np.array([[0.1, 0.2, -0.1]])
    x1, x2 = gt_correspondences(c1, c2, pts)
    f = fundamental_matrix(c1, c2)
    line = f @ np.append(x1[0], 1.0)
    normal = line[:2] / np.linalg.norm(line[:2])
    moved = x2 + 3.0 * normal
    d2 = symmetric_epipolar_distance(f, x1, moved)
    # distance in image 2 is exactly 3 px; the symmetric value averages both images
    l1 = np.append(moved[0], 1.0) @ f
    d1 = abs(l1 @ np.append(x1[0], 1.0)) / np.hypot(*l1[:2])
    assert d2[0] == pytest.approx(0.5 * (3.0 + d1), rel=1e-9)
    assert tsed([(c1, c2)], [(x1, moved)], 2.0) == (1.0 if d2[0] <= 2.0 else 0.0)


def test_tsed_skips_zero_baseline():
    c1, _ = two_cameras()
    x = np.array([[10.0, 10.0]])
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        assert math.isnan(tsed([(c1, c1)], [(x, x)]))
    assert rec


def test_render_correspondences_exact_for_truth():
    scene = generate_scene(SceneSpec(width=64, height=64), 0)
    c1 = scene.test_cams[0]
    c2 = c1.with_pose(Pose(c1.pose.rotation, c1.pose.translation + np.array([0.05, 0.0, 0.0])))
    gt = scene.ground_truth
    x1, x2 = render_correspondences(render(gt, c1), render(gt, c2), c1, c2, gt.positions)
    assert len(x1) > 5
    assert tsed([(c1, c2)], [(x1, x2)], 2.0) > 0.8


def test_write_metrics_csv(tmp_path):
    write_metrics_csv(tmp_path / "m.csv", [(0, 20.123456, 0.5, float("nan")), (1, 30.0, 0.9, 0.75)])
    assert (tmp_path / "m.csv").read_text() == "view_id,psnr,ssim,tsed\n0,20.1235,0.5000,nan\n1,30.0000,0.9000,0.7500\n"
