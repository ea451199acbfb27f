import numpy as np
import pytest

from swarmloc.coretypes import Bounds
from swarmloc.planner import PlannerConfig
from swarmloc.sensors import SensorConfig
from swarmloc.simengine import RobotSpec, ScenarioConfig

ACCEPTANCE_LINES = []


def quiet_sensors():
    return SensorConfig(uwb_sigma=0.0, sun_sigma=0.0, vo_base_sigma=0.0, vo_velocity_gain=0.0)


@pytest.fixture
def noise_free():
    """Default geometry with every noise source switched off."""
    return ScenarioConfig(sensors=quiet_sensors(), actuation_noise=0.0)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
