"""Shared fixtures: a cheap reference configuration and lazily-run simulations.

The expensive fixtures are session-scoped so the energy/mass/guard tests and
the acceptance gate share one run directory instead of re-integrating.
"""

from __future__ import annotations

import dataclasses

import pytest

from slipflow.config_io import SimulationConfig, parse_config

SMALL_CONFIG = """
[domain]
grid_resolution = 32, 32

[body]
ell0 = 0.15, 0.0
omega0 = 0.4

[fluid]
gamma = 1.8
beta = 8.0
a_F = 0.02

[scheme]
delta = 0.05
epsilon = 1e-5
N = 6
dt = 2e-3
t_end = 0.02
"""


@pytest.fixture(scope="session")
def small_config() -> SimulationConfig:
    return parse_config(SMALL_CONFIG)


@pytest.fixture(scope="session")
def small_run(small_config, tmp_path_factory):
    """One committed 10-step run of the small config, shared read-only."""
    from slipflow import stepper

    out = tmp_path_factory.mktemp("small_run")
    summary = stepper.run(small_config, out)
    return small_config, out, summary


@pytest.fixture(scope="session")
def stationary_config(small_config) -> SimulationConfig:
    """Exact fixed point: a_F = 0 makes the uniform density stationary."""
    return dataclasses.replace(small_config, a_F=0.0, ell0=(0.0, 0.0),
                               omega0=0.0, t_end=0.004)


@pytest.fixture(scope="session")
def halt_run(small_config, tmp_path_factory):
    """Body pushed into the right wall until the clearance guard trips."""
    from slipflow import stepper

    cfg = dataclasses.replace(small_config, center0=(0.65, 0.5),
                              ell0=(0.3, 0.0), omega0=0.0, g_S=(1.5, 0.0),
                              sigma=0.04, t_end=1.0, snapshot_every=0)
    out = tmp_path_factory.mktemp("halt_run")
    summary = stepper.run(cfg, out)
    return cfg, out, summary


@pytest.fixture(scope="session")
def forced_run(small_config, tmp_path_factory):
    """Fluid-only gravity from rest; tolerance sits above the upwind flicker."""
    from slipflow import stepper

    cfg = dataclasses.replace(small_config, ell0=(0.0, 0.0), omega0=0.0,
                              g_F=(0.5, 0.0), picard_tol=1e-6)
    out = tmp_path_factory.mktemp("forced_run")
    summary = stepper.run(cfg, out)
    return cfg, out, summary
