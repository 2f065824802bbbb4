import numpy as np
import pytest
from pydantic import ValidationError

from src.errors import UnstableConfinementError
from src.exports import load_equilibrium, save_equilibrium
from src.trap_model import (Frame, TrapConfig, TrapKind, build_effective_potential, check_stability,
                            equilibrium_energy, planar_coefficients, solve_equilibrium)
from tests.conftest import (AXIAL, TWO_PI, planar_paul_config, planar_penning_config, spheroid_penning_config,
                            two_ion_paul_config)


def test_single_ion_sits_at_origin():
    config = TrapConfig(trap_kind=TrapKind.PAUL, axial_freq=AXIAL, n_ions=1, radial_freqs=(2 * AXIAL, 2 * AXIAL))
    eq = solve_equilibrium(config, seed=0, restarts=2)
    assert np.allclose(eq.positions, 0.0, atol=1e-12 * eq.units.length)
    assert eq.potential_energy == pytest.approx(0.0, abs=1e-20 * eq.units.energy)


def test_gradient_matches_finite_differences():
    potential = build_effective_potential(spheroid_penning_config(n_ions=6))
    rng = np.random.default_rng(7)
    x = rng.normal(scale=1.5, size=18)
    h = 1e-6
    numeric = np.array([(potential.energy(x + h * e) - potential.energy(x - h * e)) / (2 * h)
                        for e in np.identity(18)])
    analytic = potential.gradient(x)
    assert np.linalg.norm(numeric - analytic) <= 1e-6 * np.linalg.norm(analytic)


def test_hessian_matches_gradient_differences():
    config = spheroid_penning_config(n_ions=5).model_copy(update={"anharmonic_c4": 0.01})
    potential = build_effective_potential(config)
    x = np.random.default_rng(3).normal(scale=1.5, size=15)
    h = 1e-6
    numeric = np.column_stack([(potential.gradient(x + h * e) - potential.gradient(x - h * e)) / (2 * h)
                               for e in np.identity(15)])
    hessian = potential.hessian(x)
    assert np.allclose(hessian, hessian.T)
    assert np.max(np.abs(numeric - hessian)) <= 1e-6 * np.max(np.abs(hessian))


def test_planar_coefficients_split_by_wall():
    config = planar_penning_config()
    kx, ky = planar_coefficients(config)
    assert kx - ky == pytest.approx(2 * 0.005)
    wr = config.rotation_freq
    beta = wr * (config.cyclotron_freq - wr) / config.axial_freq ** 2 - 0.5
    assert 0.5 * (kx + ky) == pytest.approx(beta)


def test_slow_rotation_is_rejected():
    config = planar_penning_config().model_copy(update={"rotation_freq": TWO_PI * 1e3})
    with pytest.raises(UnstableConfinementError) as info:
        check_stability(config)
    assert info.value.exit_code == 4
    with pytest.raises(UnstableConfinementError):
        solve_equilibrium(config)


def test_penning_needs_field_and_rotation():
    with pytest.raises(ValidationError):
        TrapConfig(trap_kind=TrapKind.PENNING, axial_freq=AXIAL, n_ions=3)
    with pytest.raises(ValidationError):
        TrapConfig(trap_kind=TrapKind.PAUL, axial_freq=AXIAL, n_ions=3)
    with pytest.raises(ValidationError):
        TrapConfig(trap_kind=TrapKind.PAUL, axial_freq=AXIAL, n_ions=0, radial_freqs=(AXIAL, AXIAL))


def test_same_seed_gives_identical_crystal():
    config = planar_paul_config(n_ions=5)
    first = solve_equilibrium(config, seed=11, restarts=3)
    second = solve_equilibrium(config, seed=11, restarts=3)
    assert np.array_equal(first.positions, second.positions)
    assert first.restart_energies == second.restart_energies


def test_parallel_restarts_match_serial():
    config = planar_paul_config(n_ions=5)
    serial = solve_equilibrium(config, seed=5, restarts=3, workers=1)
    parallel = solve_equilibrium(config, seed=5, restarts=3, workers=3)
    assert np.array_equal(serial.positions, parallel.positions)


def test_planar_paul_crystal(planar_paul):
    config, eq, _ = planar_paul
    raw = solve_equilibrium(config, seed=1)
    assert raw.frame == Frame.LAB
    assert raw.gradient_norm <= 1e-10 * eq.units.force
    assert np.max(np.abs(raw.z)) <= 1e-6 * eq.units.length
    centre = raw.positions[:, :2].sum(axis=0)
    assert np.all(np.abs(centre) <= 1e-6 * config.n_ions * eq.units.length)


def test_two_ions_align_on_axis(two_ion_paul):
    _, eq, _ = two_ion_paul
    assert np.allclose(eq.positions[:, :2], 0.0, atol=1e-9 * eq.units.length)
    separation = abs(eq.z[0] - eq.z[1]) / eq.units.length
    # two ions in a harmonic well sit 2^(1/3) l0 apart
    assert separation == pytest.approx(2 ** (1 / 3), rel=1e-9)


def test_spheroid_has_three_dimensional_extent(spheroid_penning):
    _, eq, _ = spheroid_penning
    assert eq.frame == Frame.ROTATING
    assert np.all(np.ptp(eq.positions, axis=0) > 0.1 * eq.units.length)


def test_energy_survives_file_round_trip(planar_penning, tmp_path):
    config, eq, _ = planar_penning
    save_equilibrium(eq, tmp_path)
    loaded = load_equilibrium(tmp_path, config)
    assert np.array_equal(loaded.positions, eq.positions)
    assert equilibrium_energy(config, loaded.positions) == pytest.approx(
        equilibrium_energy(config, eq.positions), rel=1e-12)


def test_best_restart_is_lowest_energy():
    config = two_ion_paul_config()
    eq = solve_equilibrium(config, seed=4, restarts=4)
    assert eq.potential_energy == pytest.approx(min(eq.restart_energies), rel=1e-12)


@pytest.mark.slow
def test_large_spheroid_crystal():
    config = spheroid_penning_config(n_ions=120)
    eq = solve_equilibrium(config, seed=0, restarts=2)
    assert eq.gradient_norm <= 1e-10 * eq.units.force
    assert np.all(np.ptp(eq.positions, axis=0) > 1.0 * eq.units.length)
