from dataclasses import replace

import numpy as np
import pytest

from src.normal_modes import compute_modes
from src.trap_model import TrapConfig, TrapKind, solve_equilibrium

TWO_PI = 2 * np.pi
AXIAL = TWO_PI * 1.62e6


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow crystal solves")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def snap_to_plane(eq):
    """Planar crystals converge to |z| ~ 1e-12; pin them to z = 0 exactly."""
    positions = eq.positions.copy()
    positions[:, 2] = 0.0
    return replace(eq, positions=positions)


def planar_paul_config(n_ions: int = 7) -> TrapConfig:
    return TrapConfig(trap_kind=TrapKind.PAUL, axial_freq=AXIAL, n_ions=n_ions,
                      radial_freqs=(0.2 * AXIAL, 0.25 * AXIAL))


def planar_penning_config(n_ions: int = 7) -> TrapConfig:
    return TrapConfig(trap_kind=TrapKind.PENNING, axial_freq=AXIAL, n_ions=n_ions, magnetic_field=4.4588,
                      rotation_freq=TWO_PI * 184e3, wall_strength=0.005)


def spheroid_penning_config(n_ions: int = 12) -> TrapConfig:
    return TrapConfig(trap_kind=TrapKind.PENNING, axial_freq=AXIAL, n_ions=n_ions, magnetic_field=4.4588,
                      rotation_freq=TWO_PI * 400e3, wall_strength=0.015)


def bilayer_paul_config(n_ions: int = 60) -> TrapConfig:
    """Oblate enough for a bilayer centre, not for a third plane."""
    return TrapConfig(trap_kind=TrapKind.PAUL, axial_freq=AXIAL, n_ions=n_ions,
                      radial_freqs=(TWO_PI * 0.69e6, TWO_PI * 0.74e6))


def two_ion_paul_config() -> TrapConfig:
    return TrapConfig(trap_kind=TrapKind.PAUL, axial_freq=AXIAL, n_ions=2, radial_freqs=(3 * AXIAL, 3 * AXIAL))


@pytest.fixture(scope="session")
def planar_paul():
    config = planar_paul_config()
    eq = snap_to_plane(solve_equilibrium(config, seed=1))
    return config, eq, compute_modes(config, eq)


@pytest.fixture(scope="session")
def planar_penning():
    config = planar_penning_config()
    eq = snap_to_plane(solve_equilibrium(config, seed=2))
    return config, eq, compute_modes(config, eq)


@pytest.fixture(scope="session")
def spheroid_penning():
    config = spheroid_penning_config()
    eq = solve_equilibrium(config, seed=3)
    return config, eq, compute_modes(config, eq)


@pytest.fixture(scope="session")
def two_ion_paul():
    config = two_ion_paul_config()
    eq = solve_equilibrium(config, seed=0)
    return config, eq, compute_modes(config, eq)


@pytest.fixture(scope="session")
def bilayer_paul():
    config = bilayer_paul_config()
    eq = solve_equilibrium(config, seed=5, restarts=2)
    return config, eq, compute_modes(config, eq)
