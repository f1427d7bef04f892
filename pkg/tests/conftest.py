import numpy as np
import pytest

from uvvolumes.dataset import make_dataset
from uvvolumes.model import Model, ModelConfig
from uvvolumes.scene import BodyConfig, pose_body, ring_cameras


def finite_difference(f, x, eps=1e-6):
    """Central-difference gradient of a scalar-valued f at ndarray x."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        hi = f(x)
        flat[i] = old - eps
        lo = f(x)
        flat[i] = old
        gf[i] = (hi - lo) / (2 * eps)
    return g


def rel_error(a, b, floor=1e-8):
    denom = np.maximum(np.abs(a) + np.abs(b), floor)
    return float(np.max(np.abs(a - b) / denom))


@pytest.fixture(scope="session")
def rest_body():
    return pose_body(BodyConfig())


@pytest.fixture(scope="session")
def small_model():
    return Model(
        ModelConfig(volume_resolution=12, n_samples=8, top_k_parts=24), seed=3
    )


@pytest.fixture(scope="session")
def tiny_dataset():
    return make_dataset(n_views=4, n_poses=3, width=40, height=40, seed=11)


@pytest.fixture(scope="session")
def one_camera(rest_body):
    return ring_cameras(rest_body, 1, 40, 40)[0]
