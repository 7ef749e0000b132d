import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from splatfix import sh

dirs = st.lists(st.floats(-1, 1), min_size=3, max_size=3).filter(lambda v: np.linalg.norm(v) > 1e-2).map(
    lambda v: np.asarray(v) / np.linalg.norm(v))


@given(dirs)
def test_degree0_view_independent(d):
    coeffs = sh.rgb_to_dc((0.5, 0.5, 0.5)).reshape(1, 3)
    assert np.allclose(sh.sh_to_color(coeffs, d), 0.5)


def test_zero_coefficients_give_offset():
    for degree in range(4):
        coeffs = np.zeros((sh.num_coeffs(degree), 3))
        assert np.allclose(sh.sh_to_color(coeffs, (0, 0, 1)), sh.COLOR_OFFSET)


def test_linear_band_antisymmetry():
    coeffs = np.zeros((4, 3))
    coeffs[2] = (0.3, -0.1, 0.2)  # the z band
    up = sh.sh_to_color(coeffs, (0, 0, 1))
    down = sh.sh_to_color(coeffs, (0, 0, -1))
    band = sh.C1 * coeffs[2]
    assert np.allclose(up - down, 2 * band, atol=1e-12)


def test_num_coeffs():
    assert [sh.num_coeffs(d) for d in range(4)] == [1, 4, 9, 16]
    with pytest.raises(ValueError):
        sh.num_coeffs(4)


def _orthonormality(degree, n=400_000):
    rng = np.random.default_rng(0)
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    b = sh.basis(d, degree)
    return 4 * np.pi * (b.T @ b) / n


def test_basis_orthonormal_on_sphere():
    gram = _orthonormality(3)
    assert np.allclose(gram, np.eye(16), atol=0.02)


@given(dirs)
def test_basis_grad_matches_finite_differences(d):
    h = 1e-6
    g = sh.basis_grad(d[None], 3)[0]
    for axis in range(3):
        e = np.zeros(3)
        e[axis] = h
        num = (sh.basis((d + e)[None], 3)[0] - sh.basis((d - e)[None], 3)[0]) / (2 * h)
        assert np.allclose(g[:, axis], num, atol=1e-6)
