from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from spfilter.geometry import CameraIntrinsics, SurfaceMap

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_intr():
    return CameraIntrinsics(50.0, 50.0, 32.0, 24.0, 64, 48)


def flat_surface(size=20.0, resolution=0.1, z=0.0, variance=0.001, origin=(-10.0, -10.0)):
    n = int(round(size / resolution))
    return SurfaceMap(origin, resolution, np.full((n, n), z), np.full((n, n), variance),
                      np.ones((n, n), dtype=bool))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
