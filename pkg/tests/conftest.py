import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from splattrack.geom import Camera, GaussianTrajectory  # noqa: E402


def random_quats(rng, n):
    q = rng.normal(size=(n, 4))
    return q / np.linalg.norm(q, axis=1, keepdims=True)


def random_trajectory(rng, n=8, k=2, width=32, height=32, depth=(0.8, 1.5),
                      spread=0.3, scale=(0.03, 0.12), dmu_scale=0.03, dr_scale=0.1,
                      color_range=(0.0, 1.0)):
    """Seeded trajectory whose Gaussians project roughly inside the image."""
    z = rng.uniform(*depth, size=n)
    xy = rng.uniform(-spread, spread, size=(n, 2)) * z[:, None]
    if width != height:
        xy[:, 0] *= width / max(width, height)
        xy[:, 1] *= height / max(width, height)
    return GaussianTrajectory(
        mu=np.c_[xy, z],
        s=rng.uniform(*scale, size=(n, 3)),
        phi=random_quats(rng, n),
        r=rng.uniform(*color_range, size=(n, 3)),
        o=rng.uniform(0.2, 0.95, size=n),
        dmu=rng.normal(scale=dmu_scale, size=(k - 1, n, 3)),
        dr=rng.normal(scale=dr_scale, size=(k - 1, n, 3)),
    )


@pytest.fixture
def cam32():
    return Camera.default(32, 32)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
