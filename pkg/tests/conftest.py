from pathlib import Path

import numpy as np
import pytest

from monolift.geometry import CameraIntrinsics

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def fixtures() -> Path:
    return FIXTURES


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def kitti_k() -> CameraIntrinsics:
    """Intrinsics of the bundled KITTI calibration (P2 of frame 000000)."""
    return CameraIntrinsics(721.5377, 721.5377, 609.5593, 172.854,
                            (44.85728, 0.2163791, 0.002745884))


# -- acceptance reporting ---------------------------------------------------------

_CRITERIA = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_CRITERIA] = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or not (rep.when == "call" or (rep.when == "setup" and not rep.passed)):
        return
    detail = dict(item.user_properties).get("detail", "")
    status = "PASS" if rep.passed else "FAIL"
    line = f"{status}  {marker.args[0]}" + (f"  [{detail}]" if detail else "")
    item.config.stash[_CRITERIA].append(line)


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_CRITERIA, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
