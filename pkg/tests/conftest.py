import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from objdepth.config import ExperimentConfig, ObjectConfig, SceneConfig  # noqa: E402


def small_config(size=64, objects=(), counts=None, translation=(-2.0, 0.0, 0.0)):
    """A single forward-looking camera with a tiny image."""
    cfg = ExperimentConfig()
    cam = cfg.cameras[0]
    cam.name, cam.yaw_deg = "front", 0.0
    ic = cam.intrinsics
    ic.width = ic.height = size
    ic.fx = ic.fy = float(size)
    ic.cx = ic.cy = (size - 1) / 2
    cfg.cameras = [cam]
    cfg.ego_motion.translation = list(translation)
    cfg.scene = SceneConfig(counts=dict(counts or {}), objects=[ObjectConfig(**o) for o in objects])
    return cfg


@pytest.fixture
def tiny_cfg():
    return small_config(
        objects=[
            {"category": "car", "depth": 12.0, "lateral": -1.5, "yaw_deg": 20.0},
            {"category": "pedestrian", "depth": 8.0, "lateral": 1.5},
        ]
    )


def pytest_terminal_summary(terminalreporter):
    try:
        import test_acceptance
    except ImportError:
        return
    if test_acceptance.VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(test_acceptance.VERDICTS.values(), key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
