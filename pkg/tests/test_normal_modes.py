import numpy as np
import pytest

from src.errors import ModeInstabilityError
from src.normal_modes import (com_mode_index, compute_modes, ground_state_variance, hessian, lamb_dicke_ratio,
                              mode_displacement_operator)
from src.trap_model import CrystalEquilibrium, TrapConfig, TrapKind, solve_equilibrium
from src.units import HBAR
from tests.conftest import AXIAL, TWO_PI, snap_to_plane


def _largest_components(spectrum):
    flat = spectrum.eigenvectors.reshape(spectrum.n_modes, -1)
    return flat[np.arange(spectrum.n_modes), np.argmax(np.abs(flat), axis=1)]


@pytest.mark.parametrize("fixture", ["planar_paul", "planar_penning", "spheroid_penning", "two_ion_paul"])
def test_spectrum_is_normalized_sorted_and_gauge_fixed(fixture, request):
    config, eq, spectrum = request.getfixturevalue(fixture)
    n = eq.n_ions
    assert spectrum.n_modes == 3 * n
    assert np.all(np.diff(spectrum.frequencies) <= 0)
    assert np.all(spectrum.frequencies > 0)
    norms = np.sum(np.abs(spectrum.eigenvectors) ** 2, axis=(1, 2))
    assert np.allclose(norms, 1.0, atol=1e-12)
    largest = _largest_components(spectrum)
    assert np.all(np.abs(largest.imag) <= 1e-10)
    assert np.all(largest.real > 0)
    assert np.max(spectrum.residuals) < 1e-8


def test_two_ion_frequencies(two_ion_paul):
    config, _, spectrum = two_ion_paul
    expected = np.array([3.0, 3.0, np.sqrt(8.0), np.sqrt(8.0), np.sqrt(3.0), 1.0]) * config.axial_freq
    assert np.allclose(spectrum.frequencies, expected, rtol=1e-9)
    com = com_mode_index(spectrum)
    assert com == 5
    assert np.allclose(spectrum.uz(com), np.full(2, 1 / np.sqrt(2)), atol=1e-9)
    assert spectrum.branch_labels[com] == "drumhead"


def test_paul_modes_are_orthonormal(planar_paul):
    _, _, spectrum = planar_paul
    flat = spectrum.eigenvectors.reshape(spectrum.n_modes, -1)
    assert np.allclose(flat.conj() @ flat.T, np.identity(spectrum.n_modes), atol=1e-10)


def test_planar_paul_top_mode_is_axial_com(planar_paul):
    config, _, spectrum = planar_paul
    assert com_mode_index(spectrum) == 0
    assert spectrum.frequencies[0] == pytest.approx(config.axial_freq, rel=1e-9)
    assert spectrum.branch_labels.count("drumhead") == config.n_ions


def test_planar_penning_drumhead_modes_are_real_and_decoupled(planar_penning):
    config, _, spectrum = planar_penning
    drumhead = [n for n, label in enumerate(spectrum.branch_labels) if label == "drumhead"]
    assert len(drumhead) == config.n_ions
    for n in drumhead:
        u = spectrum.eigenvectors[n]
        assert np.max(np.abs(u.imag)) <= 1e-10
        assert np.max(np.abs(u[:, :2])) <= 1e-10
    com = com_mode_index(spectrum)
    assert spectrum.frequencies[com] == pytest.approx(config.axial_freq, rel=1e-9)


def test_spheroid_penning_has_mixed_branches(spheroid_penning):
    _, _, spectrum = spheroid_penning
    assert not spectrum.flagged.any()
    assert set(spectrum.branch_labels) - {"drumhead", "planar", "mixed"} == set()


def test_zero_point_lengths(planar_paul):
    config, _, spectrum = planar_paul
    expected = np.sqrt(HBAR / (2 * config.ion_mass * spectrum.frequencies))
    assert np.allclose(spectrum.zero_point_lengths, expected, rtol=1e-14)


def test_displacement_operator_and_variance(planar_paul):
    _, _, spectrum = planar_paul
    terms = mode_displacement_operator(spectrum, ion=2, axis="z")
    assert len(terms) == spectrum.n_modes
    for n, c, c_conj in terms:
        assert c_conj == np.conj(c)
        assert c == pytest.approx(spectrum.zero_point_lengths[n] * spectrum.eigenvectors[n, 2, 2])
    variance = ground_state_variance(spectrum, ion=2, axis="z")
    expected = np.sum(spectrum.zero_point_lengths ** 2 * np.abs(spectrum.eigenvectors[:, 2, 2]) ** 2)
    assert variance == pytest.approx(expected, rel=1e-12)
    with pytest.raises(IndexError):
        mode_displacement_operator(spectrum, ion=99, axis="z")
    with pytest.raises(IndexError):
        mode_displacement_operator(spectrum, ion=0, axis="w")


def test_lamb_dicke_ratio_uses_longest_mode(planar_paul):
    _, _, spectrum = planar_paul
    assert lamb_dicke_ratio(2e6, spectrum) == pytest.approx(2e6 * spectrum.zero_point_lengths.max())


def test_rephasing_keeps_frequencies(planar_paul):
    _, _, spectrum = planar_paul
    phases = np.random.default_rng(0).uniform(0, 2 * np.pi, spectrum.n_modes)
    rotated = spectrum.rephased(phases)
    assert np.array_equal(rotated.frequencies, spectrum.frequencies)
    assert np.allclose(np.abs(rotated.eigenvectors), np.abs(spectrum.eigenvectors))


def test_saddle_point_reports_unstable_mode(two_ion_paul):
    config, eq, _ = two_ion_paul
    # both ions stacked in the radial plane: a saddle of the axial potential
    positions = np.array([[0.5, 0.0, 0.0], [-0.5, 0.0, 0.0]]) * 2 ** (1 / 3) / 3 ** (2 / 3) * eq.units.length
    saddle = CrystalEquilibrium(positions=positions, frame=eq.frame, potential_energy=0.0, gradient_norm=0.0,
                                seed=0, units=eq.units)
    with pytest.raises(ModeInstabilityError) as info:
        compute_modes(config, saddle)
    assert info.value.exit_code == 4
    assert 0 <= info.value.mode_index < 6


def test_hessian_is_symmetric(planar_penning):
    config, eq, _ = planar_penning
    k = hessian(config, eq)
    assert np.allclose(k, k.T)
    assert np.array_equal(snap_to_plane(eq).positions, eq.positions)


def test_single_paul_ion_oscillates_along_the_axes():
    config = TrapConfig(trap_kind=TrapKind.PAUL, axial_freq=AXIAL, n_ions=1, radial_freqs=(2.0 * AXIAL, 1.5 * AXIAL))
    spectrum = compute_modes(config, solve_equilibrium(config, seed=0, restarts=1))
    assert np.allclose(spectrum.frequencies, np.array([2.0, 1.5, 1.0]) * AXIAL, rtol=1e-12)
    assert np.allclose(spectrum.eigenvectors[:, 0, :], np.identity(3), atol=1e-12)
    assert spectrum.branch_labels == ("planar", "planar", "drumhead")


def test_single_penning_ion_matches_closed_form():
    config = TrapConfig(trap_kind=TrapKind.PENNING, axial_freq=AXIAL, n_ions=1, magnetic_field=4.4588,
                        rotation_freq=TWO_PI * 400e3)
    spectrum = compute_modes(config, solve_equilibrium(config, seed=0, restarts=1))
    wc = config.cyclotron_freq
    s = np.sqrt(wc ** 2 - 2 * AXIAL ** 2)
    wc_rot = wc - 2 * config.rotation_freq
    # rotating-frame cyclotron, axial, magnetron
    expected = np.array([(s + wc_rot) / 2, AXIAL, (s - wc_rot) / 2])
    assert np.allclose(spectrum.frequencies, expected, rtol=1e-9)

    u = spectrum.eigenvectors[:, 0, :]
    assert np.allclose(np.abs(u[1]), [0.0, 0.0, 1.0], atol=1e-12)
    handedness = []
    for n in (0, 2):
        assert np.allclose(np.abs(u[n, :2]), 1 / np.sqrt(2), atol=1e-9)
        assert abs(u[n, 2]) <= 1e-12
        ratio = u[n, 1] / u[n, 0]
        assert abs(ratio.real) <= 1e-9 and abs(abs(ratio) - 1) <= 1e-9
        handedness.append(np.sign(ratio.imag))
    # cyclotron and magnetron circulate in opposite senses
    assert handedness[0] == -handedness[1]


def test_spheroid_penning_axial_modes_are_chiral(spheroid_penning):
    _, _, spectrum = spheroid_penning
    z_weight = np.sum(np.abs(spectrum.eigenvectors[:, :, 2]) ** 2, axis=1)
    com = com_mode_index(spectrum)
    axial = [n for n in np.flatnonzero(z_weight > 0.5) if n != com]
    assert axial
    phases = [np.max(np.abs(spectrum.eigenvectors[n].imag)) for n in axial]
    assert max(phases) > 1e-6
    # the centre-of-mass mode stays a pure, real z translation
    assert np.max(np.abs(spectrum.eigenvectors[com].imag)) <= 1e-10
