import numpy as np
import pytest

from splatfix.posemath import Pose
from splatfix.scene import Camera, Gaussian, GaussianCloud, SceneSpec, generate_scene


def random_cloud(rng, n=5, degree=1, spread=0.6, dtype=np.float64):
    k = (degree + 1) ** 2
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return GaussianCloud(
        rng.uniform(-spread, spread, size=(n, 3)),
        q,
        np.log(rng.uniform(0.1, 0.3, size=(n, 3))),
        rng.normal(0.5, 1.0, size=n),
        rng.normal(scale=0.3, size=(n, k, 3)),
        degree,
    ).astype(dtype)


def front_camera(size=32, distance=3.0, fov=50.0):
    return Camera.from_fov(Pose.look_at((0, -distance, 0.3), (0, 0, 0)), size, size, fov)


def axis_camera(width=32, height=32, f=30.0):
    """Camera at the origin looking down +z with identity rotation."""
    return Camera(Pose.identity(), f, f, width / 2, height / 2, width, height)


def iso_gaussian(pos, scale=1.0, opacity_logit=0.0, degree=0, dc=None):
    k = (degree + 1) ** 2
    coeffs = np.zeros((k, 3))
    if dc is not None:
        coeffs[0] = dc
    return Gaussian(np.asarray(pos, float), np.array([1.0, 0, 0, 0]), np.full(3, np.log(scale)), opacity_logit,
                    coeffs)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_scene():
    return generate_scene(SceneSpec(n_gaussians=20, width=32, height=32), seed=3)


ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance():
    """Records one pass/fail line per acceptance criterion for the terminal summary."""

    def record(label: str, ok: bool, detail: str) -> bool:
        line = f"[{'PASS' if ok else 'FAIL'}] {label}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
