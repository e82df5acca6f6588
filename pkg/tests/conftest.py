import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def rodrigues(phi):
    """Rotation matrices from axis-angle vectors (..., 3), written independently of the package."""
    phi = np.asarray(phi, dtype=float)
    theta = np.sqrt((phi * phi).sum(axis=-1))[..., None, None]
    k = phi / np.where(theta[..., 0] < 1e-12, 1.0, theta[..., 0])
    zero = np.zeros(phi.shape[:-1])
    kx = np.stack([
        np.stack([zero, -k[..., 2], k[..., 1]], axis=-1),
        np.stack([k[..., 2], zero, -k[..., 0]], axis=-1),
        np.stack([-k[..., 1], k[..., 0], zero], axis=-1),
    ], axis=-2)
    return np.eye(3) + np.sin(theta) * kx + (1 - np.cos(theta)) * kx @ kx


def matrix_angle(a, b):
    """Geodesic angle between rotation matrices (..., 3, 3), accurate near zero."""
    d = np.sqrt(((np.asarray(a) - np.asarray(b)) ** 2).sum(axis=(-2, -1)))
    return 2.0 * np.arcsin(np.minimum(1.0, d / (2.0 * np.sqrt(2.0))))


def homogeneous(R, t):
    R = np.asarray(R, dtype=float)
    m = np.zeros(R.shape[:-2] + (4, 4))
    m[..., :3, :3] = R
    m[..., :3, 3] = t
    m[..., 3, 3] = 1.0
    return m


def random_rotvec(rng, max_angle=np.pi - 1e-6):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return axis * rng.uniform(0, max_angle)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
