import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hybrid_reservoir.fields import GridSpec
from hybrid_reservoir.reservoir import SimConfig

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# Lines appended by tests/test_acceptance.py, echoed at the end of the session.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def small_config(**over) -> SimConfig:
    """4x4x4 grid, 2 s windows; big enough to exercise every code path quickly."""
    d = SimConfig().to_dict()
    d["grid"] = {"nx": 4, "ny": 4, "nz": 4, "voxel_edge_um": 10.0, "dt_s": 0.02}
    d["ac"].update(window_s=2.0, stim_s=1.0)
    d["ac_positions_um"] = [[10.0, 15.0, 20.0], [10.0, 25.0, 20.0]]
    d["n_bact_init"] = 20
    d["n_windows"] = 12
    d["n_washin"] = 2
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(d.get(k), dict):
            d[k].update(v)
        else:
            d[k] = v
    return SimConfig.from_dict(d)


@pytest.fixture
def small_cfg():
    return small_config()


@pytest.fixture
def grid():
    return GridSpec()


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
