import numpy as np
import pytest

from splatfix.losses import LossConfig, distillation_loss, photo_loss
from splatfix.metrics import ssim


def test_distillation_constant_images():
    r = np.full((16, 16, 3), 0.5)
    f = np.full((16, 16, 3), 0.3)
    loss, grad = distillation_loss(r, f)
    assert loss == pytest.approx(0.01, abs=1e-12)
    assert np.allclose(grad, 2 * 0.25 * 0.2 / r.size)


def test_distillation_zero_for_identical():
    r = np.random.default_rng(0).uniform(size=(8, 8, 3))
    loss, grad = distillation_loss(r, r.copy())
    assert loss == 0.0 and not np.any(grad)


def test_distillation_gradient_exact():
    rng = np.random.default_rng(1)
    r, f = rng.uniform(size=(6, 7, 3)), rng.uniform(size=(6, 7, 3))
    loss, grad = distillation_loss(r, f)
    h = 1e-4
    for idx in [(0, 0, 0), (3, 4, 2), (5, 6, 1)]:
        r[idx] += h
        fp, _ = distillation_loss(r, f)
        r[idx] -= 2 * h
        fm, _ = distillation_loss(r, f)
        r[idx] += h
        num = (fp - fm) / (2 * h)
        # quadratic: central differences are exact up to rounding
        assert abs(num - grad[idx]) / abs(grad[idx]) < 1e-6


def test_photo_loss_weights():
    rng = np.random.default_rng(2)
    r, g = rng.uniform(size=(16, 16, 3)), rng.uniform(size=(16, 16, 3))
    loss, _ = photo_loss(r, g)
    expected = 0.2 * np.mean(np.abs(r - g)) + 0.8 * (1 - ssim(r, g))
    assert loss == pytest.approx(expected, abs=1e-12)
    assert photo_loss(r, r)[0] == pytest.approx(0.0, abs=1e-12)


def test_photo_loss_gradient():
    rng = np.random.default_rng(3)
    r, g = rng.uniform(size=(14, 14, 3)), rng.uniform(size=(14, 14, 3))
    _, grad = photo_loss(r, g)
    h = 1e-7
    for idx in [(0, 0, 0), (7, 7, 1), (13, 2, 2)]:
        r[idx] += h
        fp, _ = photo_loss(r, g)
        r[idx] -= 2 * h
        fm, _ = photo_loss(r, g)
        r[idx] += h
        assert grad[idx] == pytest.approx((fp - fm) / (2 * h), rel=1e-5, abs=1e-10)


def test_shape_mismatch():
    with pytest.raises(ValueError):
        photo_loss(np.zeros((16, 16, 3)), np.zeros((16, 15, 3)))
    with pytest.raises(ValueError):
        distillation_loss(np.zeros((16, 16, 3)), np.zeros((15, 16, 3)))


def test_config_validation():
    with pytest.raises(ValueError):
        LossConfig(lambda_l1=-1).validate()
    cfg = LossConfig()
    assert (cfg.lambda_l1, cfg.lambda_ssim, cfg.omega_t0, cfg.t0) == (0.2, 0.8, 0.5, 199)
