"""
Shared fixtures for the test suite.
Slow end-to-end runs are skipped unless pytest is given --runslow.
"""

import numpy as np
import pytest

from app.core.config import settings
from app.geometry.camera import look_at
from app.schemas.scene import PrimitiveSpec, RigSpec, SceneSpec
from app.services.synthlab import generate_scene
from app.tensor.array import precision


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow end-to-end tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running end-to-end test (needs --runslow)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(autouse=True)
def restore_settings():
    """Undo settings overrides made by a test (CLI flags mutate the singleton)."""
    saved = settings.model_dump()
    yield
    for key, value in saved.items():
        setattr(settings, key, value)


@pytest.fixture
def double():
    """Run the test body in double precision."""
    with precision("double"):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_camera(eye=(0.0, 0.0, -4.0), target=(0.0, 0.0, 0.0), width=33, height=33, f=30.0,
                depth_min=2.0, depth_max=6.0, up=(0.0, -1.0, 0.0), depth_num=48):
    """Pinhole camera with principal point at the image center."""
    K = np.array([[f, 0.0, (width - 1) / 2], [0.0, f, (height - 1) / 2], [0.0, 0.0, 1.0]])
    return look_at(eye, target, up, K, width, height, depth_min, depth_max, depth_num)


@pytest.fixture
def camera():
    return make_camera()


def small_spec(count=5, width=32, height=32, kind="sphere", **rig) -> SceneSpec:
    return SceneSpec(
        primitive=PrimitiveSpec(kind=kind, size=1.0),
        rig=RigSpec(count=count, radius=4.0, elevation=15.0, **rig),
        width=width,
        height=height,
        num_tracks=120,
        seed=7,
    )


@pytest.fixture(scope="session")
def ring_scene():
    """Five-camera textured sphere at 32x32."""
    return generate_scene(small_spec())
