import numpy as np
import pytest

from src.drive_config import PADriveSpec, SDFSpec, derive_phases, mode_coupling_strengths
from src.errors import AnalysisError
from src.normal_modes import ModeSpectrum, com_mode_index
from src.parametric import OverlapMatrices, amplify_mode, compute_overlaps, detuning_for_target
from src.spin_interactions import (BOTTOM, SCAFFOLD, TOP, apply_scaling, assign_layers, bilayer_histograms,
                                   bilayer_sweep, coupling_matrix, imaginary_sum_check, interlayer_phase,
                                   layer_means, matched_delta_k, scale_family, two_ion_entangling_phase)
from src.trap_model import CrystalEquilibrium, Frame
from src.units import BE9_MASS, ELEMENTARY_CHARGE, UnitSystem

TWO_PI = 2 * np.pi
AXIAL = TWO_PI * 1.62e6
SEPARATION = 1e-5


def _bilayer_eq(top_z, bottom_z, extra=()):
    ring = np.array([[np.cos(a), np.sin(a)] for a in np.linspace(0, TWO_PI, 6, endpoint=False)]) * 1e-5
    top = np.column_stack([ring, top_z])
    bottom = np.column_stack([ring + 0.3e-5, bottom_z])
    positions = np.vstack([top, bottom] + [np.atleast_2d(p) for p in extra])
    return CrystalEquilibrium(positions=positions, frame=Frame.ROTATING, potential_energy=0.0, gradient_norm=0.0,
                              seed=0, units=UnitSystem.for_ion(ELEMENTARY_CHARGE, BE9_MASS, AXIAL))


def _uniform_mode(n_ions):
    vectors = np.zeros((1, n_ions, 3), dtype=complex)
    vectors[0, :, 2] = 1 / np.sqrt(n_ions)
    return ModeSpectrum(frequencies=np.array([AXIAL]), eigenvectors=vectors, zero_point_lengths=np.array([1e-8]),
                        branch_labels=("drumhead",), flagged=np.array([False]), residuals=np.zeros(1),
                        axial_freq=AXIAL, ion_mass=BE9_MASS)


@pytest.fixture
def ideal_bilayer():
    eq = _bilayer_eq(np.full(6, SEPARATION / 2), np.full(6, -SEPARATION / 2))
    spectrum = _uniform_mode(eq.n_ions)
    layers = assign_layers(eq)
    sdf = SDFSpec(kind="light_shift", strength=1e-23, delta_k=np.pi / (2 * SEPARATION), mu=AXIAL + TWO_PI * 10e3)
    phases = derive_phases(sdf, eq, reference_z=layers.medians[1])
    g = TWO_PI * 10e3
    overlaps = OverlapMatrices(A=np.ones((1, 1), dtype=complex), B=np.ones((1, 1), dtype=complex),
                               g=np.full((1, 1), g), omega_p=0.0)
    delta = detuning_for_target(TWO_PI * 1e3, g, 1.0)
    coupling = coupling_matrix(spectrum, sdf, phases, mode=0, delta=delta)
    return eq, spectrum, layers, sdf, phases, overlaps, delta, coupling


def test_two_ion_coupling_matches_entangling_phase(two_ion_paul):
    _, eq, spectrum = two_ion_paul
    sdf = SDFSpec(kind="light_shift", strength=2e-23, delta_k=7e6, mu=1e7)
    phases = derive_phases(sdf, eq)
    stretch = 4
    delta = TWO_PI * 5e3
    coupling = coupling_matrix(spectrum, sdf, phases, mode=stretch, delta=delta)
    f = mode_coupling_strengths(sdf, spectrum)[stretch]
    u = spectrum.uz(stretch) * np.exp(1j * phases.phi)
    tau = TWO_PI / delta
    chi = two_ion_entangling_phase(f, u, delta, tau)
    assert chi == pytest.approx(-2 * tau * coupling.real[0, 1], rel=1e-6)


def test_coupling_matrix_is_hermitian(planar_paul):
    _, eq, spectrum = planar_paul
    sdf = SDFSpec(kind="ms_phase_insensitive", strength=TWO_PI * 20e3, delta_k=7e6, detuning=TWO_PI * 3e3)
    coupling = coupling_matrix(spectrum, sdf, derive_phases(sdf, eq))
    assert np.allclose(coupling.J, coupling.J.conj().T)
    assert np.all(np.diag(coupling.J) == 0)
    assert coupling.mu == pytest.approx(spectrum.frequencies[0] + TWO_PI * 3e3)
    assert imaginary_sum_check(coupling) <= 1e-12
    f = mode_coupling_strengths(sdf, spectrum)[0]
    # uniform COM mode couples every pair equally
    assert np.allclose(coupling.real[~np.eye(eq.n_ions, dtype=bool)], f ** 2 / (eq.n_ions * TWO_PI * 3e3))


def test_couplings_are_gauge_invariant(spheroid_penning):
    _, eq, spectrum = spheroid_penning
    sdf = SDFSpec(kind="light_shift", strength=1e-23, delta_k=7e6, detuning=TWO_PI * 3e3, target_mode=5)
    phases = derive_phases(sdf, eq)
    rotated = spectrum.rephased(np.random.default_rng(3).uniform(0, TWO_PI, spectrum.n_modes))
    reference = coupling_matrix(spectrum, sdf, phases)
    rephased = coupling_matrix(rotated, sdf, phases)
    assert np.max(np.abs(reference.J - rephased.J)) <= 1e-10 * np.max(np.abs(reference.J))


def test_zero_detuning_is_rejected(planar_paul):
    _, eq, spectrum = planar_paul
    sdf = SDFSpec(kind="light_shift", strength=1e-23, delta_k=7e6, detuning=0.0)
    with pytest.raises(AnalysisError) as info:
        coupling_matrix(spectrum, sdf, derive_phases(sdf, eq))
    assert info.value.exit_code == 7


def test_scaling_checks_dimensions(ideal_bilayer):
    coupling = ideal_bilayer[-1]
    unchanged = apply_scaling(coupling, np.ones(coupling.n_ions))
    assert unchanged.scaled
    assert np.allclose(unchanged.J, coupling.J)
    with pytest.raises(AnalysisError):
        apply_scaling(coupling, np.ones(coupling.n_ions + 1))


def test_scaling_multiplies_complex_couplings(spheroid_penning):
    _, eq, spectrum = spheroid_penning
    sdf = SDFSpec(kind="light_shift", strength=1e-23, delta_k=7e6, detuning=TWO_PI * 3e3, target_mode=5)
    coupling = coupling_matrix(spectrum, sdf, derive_phases(sdf, eq))
    assert np.max(np.abs(coupling.J.imag)) > 0.1 * np.max(np.abs(coupling.J))

    rng = np.random.default_rng(11)
    S = rng.uniform(0.5, 2.0, eq.n_ions) * np.exp(1j * rng.uniform(0, TWO_PI, eq.n_ions))
    scaled = apply_scaling(coupling, S)
    expected = np.real(np.outer(S, S) * coupling.J)
    assert np.allclose(scaled.real, expected, rtol=0, atol=1e-12 * np.max(np.abs(expected)))
    # scaling only the real part would drop the Im S_j S_k * Im J_jk contribution
    real_only = np.real(np.outer(S, S)) * coupling.real
    assert np.max(np.abs(scaled.real - real_only)) > 0.1 * np.max(np.abs(expected))


def test_ideal_bilayer_layers(ideal_bilayer):
    _, _, layers, sdf, phases, *_ = ideal_bilayer
    assert layers.indices(TOP).tolist() == list(range(6))
    assert layers.indices(BOTTOM).tolist() == list(range(6, 12))
    assert layers.threshold_z == pytest.approx(0.0, abs=1e-15)
    assert interlayer_phase(layers, sdf.delta_k) == pytest.approx(np.pi / 2)
    assert np.allclose(phases.phi[:6], -np.pi / 2)
    assert np.allclose(phases.phi[6:], 0.0)


def test_bilayer_selects_layer_at_zero_phase(ideal_bilayer):
    _, spectrum, layers, _, phases, overlaps, delta, coupling = ideal_bilayer
    scales = scale_family(spectrum, overlaps, phases, 0, delta)
    gain = amplify_mode(spectrum, overlaps, phases, 0, delta, 0.0).gain
    unscaled_top, unscaled_bottom, unscaled_inter = layer_means(coupling.J, layers)
    assert unscaled_top == pytest.approx(unscaled_bottom)
    assert abs(unscaled_inter) <= 1e-10 * unscaled_top

    sweep = bilayer_sweep(coupling, scales, layers, np.linspace(0, TWO_PI, 25))
    assert sweep.mean_bottom[0] / unscaled_bottom == pytest.approx(gain, rel=0.1)
    assert sweep.mean_top[0] / unscaled_top == pytest.approx(1 / gain, rel=0.1)
    assert np.max(np.abs(sweep.mean_inter)) <= 0.05 * unscaled_top
    assert sweep.as_columns().shape == (25, 4)
    # half a turn of the PA phase swaps the roles of the layers
    assert sweep.mean_top[12] == pytest.approx(sweep.mean_bottom[0], rel=1e-9)


def test_bilayer_histograms_count_every_pair(ideal_bilayer):
    _, spectrum, layers, _, phases, overlaps, delta, coupling = ideal_bilayer
    S = amplify_mode(spectrum, overlaps, phases, 0, delta, 0.0).S
    histograms = bilayer_histograms(coupling, S, layers, bins=15)
    assert histograms["edges"].size == 16
    assert histograms["intra_off"].sum() == 60
    assert histograms["intra_on"].sum() == 60
    assert histograms["inter_off"].sum() == 72
    assert histograms["inter_on"].sum() == 72


def test_scaffold_ions_are_excluded():
    jitter = SEPARATION * 1e-3 * np.array([-2.0, -1.0, 0.0, 1.0, 2.0, 0.5])
    outlier = [1.5e-5, 0.0, SEPARATION * 0.75]
    eq = _bilayer_eq(SEPARATION / 2 + jitter, -SEPARATION / 2 + jitter, extra=[outlier])
    layers = assign_layers(eq, mad_factor=3.0)
    assert layers.labels[-1] == SCAFFOLD
    assert layers.indices(TOP).size == 6
    assert layers.indices(BOTTOM).size == 6

    trimmed = assign_layers(eq, radial_cutoff=1.2e-5)
    outside = np.flatnonzero(np.hypot(eq.positions[:, 0], eq.positions[:, 1]) > 1.2e-5)
    assert outside.size > 1
    assert set(trimmed.indices(SCAFFOLD)) >= set(outside.tolist())
    assert trimmed.indices(BOTTOM).size > 0


def test_single_plane_is_rejected():
    eq = _bilayer_eq(np.zeros(6), np.zeros(6))
    with pytest.raises(AnalysisError) as info:
        assign_layers(eq)
    assert "z_histogram" in info.value.diagnostics


def test_unimodal_heights_are_rejected():
    eq = _bilayer_eq(np.linspace(0, 5e-6, 6), np.linspace(-5.5e-6, -0.5e-6, 6))
    with pytest.raises(AnalysisError):
        assign_layers(eq)


def test_matched_delta_k_hits_the_requested_phase(ideal_bilayer):
    layers = ideal_bilayer[2]
    assert matched_delta_k(layers, 1.0) == pytest.approx(np.pi / (2 * SEPARATION))
    near = matched_delta_k(layers, 7e6)
    assert interlayer_phase(layers, near) % TWO_PI == pytest.approx(np.pi / 2)
    assert abs(near - 7e6) <= np.pi / SEPARATION
    assert interlayer_phase(layers, matched_delta_k(layers, 1.0, target_phase=0.0)) == pytest.approx(TWO_PI)


def test_bent_rim_ions_become_scaffold():
    # rim ions bend toward the midplane
    bend = SEPARATION * np.array([0.01, -0.01, 0.02, -0.02, -0.3, -0.45])
    eq = _bilayer_eq(SEPARATION / 2 + bend, -SEPARATION / 2 - bend)
    layers = assign_layers(eq)
    assert set(layers.indices(SCAFFOLD).tolist()) == {4, 5, 10, 11}
    assert layers.indices(TOP).tolist() == [0, 1, 2, 3]
    assert layers.medians[0] - layers.medians[1] == pytest.approx(0.97 * SEPARATION)


def test_computed_bilayer_tunes_layers_separately(bilayer_paul):
    _, eq, spectrum = bilayer_paul
    layers = assign_layers(eq)
    top, bottom = layers.indices(TOP), layers.indices(BOTTOM)
    assert top.size >= 10 and bottom.size >= 10
    assert top.size + bottom.size + layers.indices(SCAFFOLD).size == eq.n_ions

    mode = com_mode_index(spectrum)
    delta_k = matched_delta_k(layers, 1.0)
    assert interlayer_phase(layers, delta_k) == pytest.approx(np.pi / 2)
    g = TWO_PI * 5e3
    overlaps = compute_overlaps(spectrum, PADriveSpec(g=g), reference_mode=mode)
    assert abs(overlaps.A[mode, mode] - 1) < 1e-6
    delta = detuning_for_target(TWO_PI * 12e3, g, overlaps.A[mode, mode])
    sdf = SDFSpec(kind="light_shift", strength=1e-23, delta_k=delta_k, detuning=delta, target_mode=mode)
    phases = derive_phases(sdf, eq, reference_z=layers.medians[1])
    gain = amplify_mode(spectrum, overlaps, phases, mode, delta, 0.0).gain
    assert gain == pytest.approx(1.5, rel=1e-6)

    coupling = coupling_matrix(spectrum, sdf, phases, mode=mode, delta=delta)
    off_top, off_bottom, _ = layer_means(coupling.J, layers)
    assert off_top > 0 and off_bottom > 0
    sweep = bilayer_sweep(coupling, scale_family(spectrum, overlaps, phases, mode, delta), layers,
                          np.linspace(0, TWO_PI, 13))
    assert sweep.mean_bottom[0] / off_bottom == pytest.approx(gain, rel=0.1)
    assert sweep.mean_top[0] / off_top == pytest.approx(1 / gain, rel=0.1)
    assert np.ptp(sweep.mean_inter) < 0.05 * min(off_top, off_bottom)
