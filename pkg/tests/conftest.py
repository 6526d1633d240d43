"""Shared fixtures: the full six-run study is simulated once per session."""

from pathlib import Path

import numpy as np
import pytest

from hymem.cli import build_report, run_scenario
from hymem.memory_arc import constant_arc
from hymem.scenario import load_scenario
from hymem.simulator import SimOptions, simulate
from hymem.system_model import InputSignal, QuadcopterParams, quadcopter_system

SCENARIO_DIR = Path(__file__).resolve().parent.parent / "scenarios"


@pytest.fixture(scope="session")
def quad_scenario():
    return load_scenario(str(SCENARIO_DIR / "quadcopter_full.yaml"))


@pytest.fixture(scope="session")
def quad_records(quad_scenario):
    return run_scenario(quad_scenario)


@pytest.fixture(scope="session")
def quad_report(quad_scenario, quad_records):
    return build_report(quad_scenario, quad_records)


@pytest.fixture(scope="session")
def small_quad_run():
    """A one-second quadcopter run (5 jumps) for structural tests."""
    params = QuadcopterParams()
    system = quadcopter_system(params)
    state = np.array([1.0, 1.0, 0.5, 0.0, 0.0, 0.0, 1.0, 0.0])
    arc = constant_arc(state, params.r, 0.005, system.n_cont)
    u = InputSignal(kind="exp_decay", amplitude=np.array([0.5, 0.0, -0.2]), rate=0.5)
    record = simulate(system, arc, u, SimOptions(h=0.005, t_end=1.0))
    return params, system, record
