"""
Shared fixtures: small rendered rigs, pipeline configs, an in-memory database
and a TestClient bound to it
"""
import os

# must be set before app.config is imported anywhere
os.environ["DATABASE_URL"] = "sqlite://"
os.environ.setdefault("SVV_WORKERS", "2")

import pytest
from fastapi.testclient import TestClient
from sqlmodel import Session

from app.config import PipelineConfig
from app.database import get_session, init_db, make_engine
from app.vision.simulator import Occluder, RigMove, Scenario, pentagon_rig

ONE_MOVE = RigMove(frame=30, rotation_deg=(3.0, -2.0, 0.0), translation=(0.05, 0.03, -0.2))


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run full-length acceptance scenarios")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full-length scenarios, run with --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def make_scenario():
    """Factory for 320x240 rigs of downward-looking cameras at 1 m"""

    def build(
        duration=40,
        cameras=3,
        moves=(),
        occluders=(),
        noise_sigma=1.0,
        name="rig",
    ) -> Scenario:
        return Scenario(
            name=name,
            cameras=pentagon_rig(cameras, focal=300.0),
            rig_moves=list(moves),
            occluders=list(occluders),
            duration=duration,
            width=320,
            height=240,
            noise_sigma=noise_sigma,
        )

    return build


@pytest.fixture
def static_rig(make_scenario):
    return make_scenario(duration=40, name="static-rig")


@pytest.fixture
def moving_rig(make_scenario):
    """One rig move at frame 30"""
    return make_scenario(duration=90, moves=[ONE_MOVE], name="moving-rig")


@pytest.fixture
def occluded_rig(make_scenario):
    """Cameras 1 and 2 lose the field centre until frame 20"""
    occluder = Occluder(
        radius_px=40.0,
        keyframes=[(0, 159.5, 119.5), (19, 159.5, 119.5), (20, -200.0, 119.5)],
        cameras=[1, 2],
    )
    return make_scenario(duration=40, occluders=[occluder], noise_sigma=0.0, name="occluded-rig")


@pytest.fixture
def small_config():
    """Pipeline settings scaled to 3-camera clips of a few dozen frames"""
    return PipelineConfig.model_validate(
        {
            "camera_count": 3,
            "fps": 30,
            "alignment": {"target_count": 100, "max_frames": 5},
            "movement": {"window": 11, "runs": 3, "seeds": [0, 1, 2]},
            "rehoming": {"cadence": 5, "persistence": 2},
        }
    )


@pytest.fixture
def engine():
    engine = make_engine("sqlite://")
    init_db(engine)
    return engine


@pytest.fixture
def session(engine):
    with Session(engine) as session:
        yield session


@pytest.fixture
def client(engine):
    from app.main import app

    def override_get_session():
        with Session(engine) as session:
            yield session

    app.dependency_overrides[get_session] = override_get_session
    with TestClient(app) as test_client:
        yield test_client
    app.dependency_overrides.clear()
