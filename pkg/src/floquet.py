"""Counter-rotating terms of the driven spin-motion Hamiltonian.

Motional operators are collected in alpha = (a_1..a_K, a_1^dag..a_K^dag).
Every harmonic l of the Hamiltonian in the frame rotating at mu is stored as

    H_l = 1/2 alpha^T N_l alpha + lambda_l^T alpha + sum_j s_j ell_{l,j}^T alpha + sum_j m_{l,j} s'_j

with H(t) = sum_l H_l e^{i l mu t}, s_j the spin operator along the coupling
axis and s'_j the one of the motion-free term.
"""
import logging
from dataclasses import dataclass, replace
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
from scipy import linalg

from src.drive_config import GateKind, IonDrivePhases, PADriveSpec, SDFSpec, mode_coupling_strengths, \
    motion_free_amplitude
from src.errors import AboveThresholdError, AnalysisError, ConvergenceError
from src.normal_modes import ModeSpectrum
from src.parametric import compute_overlaps
from src.trap_model import CrystalEquilibrium

logger = logging.getLogger(__name__)

HARMONICS = tuple(range(-4, 5))


def symplectic_form(n_modes: int) -> np.ndarray:
    """Commutator matrix [alpha_i, alpha_j]."""
    eye = np.identity(n_modes)
    zero = np.zeros((n_modes, n_modes))
    return np.block([[zero, eye], [-eye, zero]])


def _swap(n_modes: int) -> np.ndarray:
    eye = np.identity(n_modes)
    zero = np.zeros((n_modes, n_modes))
    return np.block([[zero, eye], [eye, zero]])


@dataclass(frozen=True)
class HarmonicDecomposition:
    modes: np.ndarray                                   # spectrum indices kept
    quadratic: Dict[int, np.ndarray]                    # (2K, 2K)
    linear: Dict[int, np.ndarray]                       # (2K,)
    spin_linear: Dict[int, np.ndarray]                  # (N, 2K)
    motion_free: Dict[int, np.ndarray]                  # (N,)
    delta: np.ndarray                                   # (K,) rad/s
    g: np.ndarray                                       # (K, K)
    A: np.ndarray
    B: np.ndarray
    f: np.ndarray                                       # (K,)
    uz: np.ndarray                                      # (K, N)
    phi: np.ndarray                                     # (N,)
    theta: float
    spin_axis: str = "z"
    motion_free_axis: str = "z"
    kind: Optional[GateKind] = None

    @property
    def n_modes(self) -> int:
        return self.delta.size

    @property
    def n_ions(self) -> int:
        return self.phi.size

    @classmethod
    def from_couplings(cls, delta, g, A, B, theta: float, f=None, uz=None, phi=None, k_linear=None,
                       motion_free_plus=None, spin_axis: str = "z", motion_free_axis: str = "z",
                       modes=None, kind: Optional[GateKind] = None) -> "HarmonicDecomposition":
        """Bin every drive term by harmonic.

        k_linear holds the PA terms linear in the modes, created by the
        equilibrium offsets; motion_free_plus is the l=+1 amplitude of the
        spin term without motional operators.
        """
        delta = np.asarray(delta, dtype=float)
        n_modes = delta.size
        g = np.asarray(g, dtype=float)
        A = np.asarray(A, dtype=complex)
        B = np.asarray(B, dtype=complex)
        f = np.zeros(n_modes) if f is None else np.asarray(f, dtype=float)
        uz = np.zeros((n_modes, 1), dtype=complex) if uz is None else np.asarray(uz, dtype=complex)
        n_ions = uz.shape[1]
        phi = np.zeros(n_ions) if phi is None else np.asarray(phi, dtype=float)
        k_linear = np.zeros(n_modes, dtype=complex) if k_linear is None else np.asarray(k_linear, dtype=complex)
        motion_free_plus = (np.zeros(n_ions, dtype=complex) if motion_free_plus is None
                            else np.asarray(motion_free_plus, dtype=complex))

        size = 2 * n_modes
        quadratic = {l: np.zeros((size, size), dtype=complex) for l in HARMONICS}
        linear = {l: np.zeros(size, dtype=complex) for l in HARMONICS}
        spin_linear = {l: np.zeros((n_ions, size), dtype=complex) for l in HARMONICS}
        motion_free = {l: np.zeros(n_ions, dtype=complex) for l in HARMONICS}
        a, ad = slice(0, n_modes), slice(n_modes, size)

        def hopping(matrix, c):
            matrix[ad, a] += c
            matrix[a, ad] += c.T

        hopping(quadratic[0], -np.diag(delta).astype(complex))
        pair = g * A
        quadratic[0][a, a] += pair * np.exp(-1j * theta)
        quadratic[0][ad, ad] += pair.conj() * np.exp(1j * theta)
        quadratic[4][ad, ad] += pair.conj() * np.exp(-1j * theta)
        quadratic[-4][a, a] += pair * np.exp(1j * theta)
        hopping(quadratic[2], g * B * np.exp(-1j * theta))
        hopping(quadratic[-2], g * B * np.exp(1j * theta))

        linear[1][a] = k_linear * np.exp(-1j * theta)
        linear[-3][a] = k_linear * np.exp(1j * theta)
        linear[-1][ad] = k_linear.conj() * np.exp(1j * theta)
        linear[3][ad] = k_linear.conj() * np.exp(-1j * theta)

        # coupling of mode n to ion j, (N, K)
        coupling = (f[:, None] * uz).T
        drive = np.exp(1j * phi)[:, None]
        spin_linear[0][:, a] = coupling * drive
        spin_linear[0][:, ad] = (coupling * drive).conj()
        spin_linear[-2][:, a] = coupling * drive.conj()
        spin_linear[2][:, ad] = coupling.conj() * drive

        motion_free[1] = motion_free_plus
        motion_free[-1] = motion_free_plus.conj()

        return cls(modes=np.arange(n_modes) if modes is None else np.asarray(modes),
                   quadratic=quadratic, linear=linear, spin_linear=spin_linear, motion_free=motion_free,
                   delta=delta, g=g, A=A, B=B, f=f, uz=uz, phi=phi, theta=theta,
                   spin_axis=spin_axis, motion_free_axis=motion_free_axis, kind=kind)

    def linear_at(self, t: float, mu: float, spins: Optional[Sequence[float]] = None) -> np.ndarray:
        total = np.zeros(2 * self.n_modes, dtype=complex)
        s = np.zeros(self.n_ions) if spins is None else np.asarray(spins, dtype=float)
        for l in HARMONICS:
            total += (self.linear[l] + s @ self.spin_linear[l]) * np.exp(1j * l * mu * t)
        return total

    def quadratic_at(self, t: float, mu: float) -> np.ndarray:
        return sum(self.quadratic[l] * np.exp(1j * l * mu * t) for l in HARMONICS)

    def hamiltonian_at(self, t: float, mu: float, spins: Optional[Sequence[float]] = None):
        """(N(t), lambda(t)) of the motional Hamiltonian for frozen spins."""
        return self.quadratic_at(t, mu), self.linear_at(t, mu, spins)

    def is_hermitian(self, t: float, mu: float, spins: Optional[Sequence[float]] = None,
                     tol: float = 1e-12) -> bool:
        swap = _swap(self.n_modes)
        quad, lin = self.hamiltonian_at(t, mu, spins)
        scale = max(1.0, np.max(np.abs(quad)), np.max(np.abs(lin)))
        motion_free = sum(self.motion_free[l] * np.exp(1j * l * mu * t) for l in HARMONICS)
        return bool(np.max(np.abs(quad - swap @ quad.conj() @ swap)) <= tol * scale
                    and np.max(np.abs(lin - swap @ lin.conj())) <= tol * scale
                    and np.max(np.abs(motion_free.imag), initial=0.0) <= tol * scale)

    def without_odd(self) -> "HarmonicDecomposition":
        odd = (-3, -1, 1, 3)
        linear = {l: (np.zeros_like(v) if l in odd else v) for l, v in self.linear.items()}
        motion_free = {l: (np.zeros_like(v) if l in odd else v) for l, v in self.motion_free.items()}
        return replace(self, linear=linear, motion_free=motion_free)


def _equilibrium_offsets(spectrum: ModeSpectrum, eq: CrystalEquilibrium, omega_p: float) -> np.ndarray:
    """K_n = omega_p l_n sum_j (z0 u^z - (x0 u^x + y0 u^y) / 2)."""
    weighted = eq.positions * np.array([-0.5, -0.5, 1.0])
    projection = np.einsum('nja,ja->n', spectrum.eigenvectors, weighted)
    return omega_p * spectrum.zero_point_lengths * projection


def decompose_harmonics(sdf: SDFSpec, pa: PADriveSpec, spectrum: ModeSpectrum, phases: IonDrivePhases,
                        eq: CrystalEquilibrium, modes: Optional[Iterable[int]] = None) -> HarmonicDecomposition:
    if sdf.kind == GateKind.MS_PHASE_INSENSITIVE:
        raise AnalysisError("Counter-rotating decomposition is only defined for light_shift "
                            "and ms_phase_sensitive gates")
    modes = spectrum.usable_modes() if modes is None else np.asarray(list(modes))
    overlaps = compute_overlaps(spectrum, pa, reference_mode=sdf.target_mode)
    sub = np.ix_(modes, modes)
    mu = sdf.resolve_mu(spectrum)
    delta = mu - spectrum.frequencies[modes]
    f = mode_coupling_strengths(sdf, spectrum)[modes]
    uz = spectrum.eigenvectors[modes, :, 2]
    k_linear = _equilibrium_offsets(spectrum, eq, overlaps.omega_p)[modes]

    amplitude = motion_free_amplitude(sdf)
    if sdf.kind == GateKind.LIGHT_SHIFT:
        # -amplitude sin(mu t + phi_j) s^z
        motion_free_plus = 0.5j * amplitude * np.exp(1j * phases.raw_phi)
        motion_free_axis = "z"
    else:
        # amplitude cos(mu t) s^y in the local frames
        motion_free_plus = np.full(phases.n_ions, 0.5 * amplitude, dtype=complex)
        motion_free_axis = "y"

    logger.info(f"[FLOQUET] {sdf.kind.value}: {modes.size} modes, mu/2pi={mu / (2 * np.pi):.6g} Hz")
    return HarmonicDecomposition.from_couplings(
        delta=delta, g=overlaps.g[sub], A=overlaps.A[sub], B=overlaps.B[sub], theta=pa.theta,
        f=f, uz=uz, phi=phases.phi, k_linear=k_linear, motion_free_plus=motion_free_plus,
        spin_axis=sdf.kind.spin_axis, motion_free_axis=motion_free_axis, modes=modes, kind=sdf.kind)


@dataclass(frozen=True)
class FloquetCorrections:
    spin_spin_xx: np.ndarray          # (N, N), H += sum_{j != k} xx_jk s_j s_k
    mode_shift: np.ndarray            # (K, K), H += sum mode_shift_nm a_n^dag a_m
    extra_sdf: np.ndarray             # (N, K), H += sum (extra_jm a_m + h.c.) s_j
    G_sq: np.ndarray                  # (K,)
    quadratic_correction: np.ndarray  # (2K, 2K)
    mu: float
    scale_ratio: float                # mu over the largest internal rate


def floquet_corrections(harmonics: HarmonicDecomposition, mu: float) -> FloquetCorrections:
    """Leading high-frequency correction sum_{l>0} [H_l, H_{-l}] / (l mu)."""
    n_modes = harmonics.n_modes
    omega = symplectic_form(n_modes)
    size = 2 * n_modes

    quad = np.zeros((size, size), dtype=complex)
    xx = np.zeros((harmonics.n_ions, harmonics.n_ions), dtype=complex)
    sdf = np.zeros((harmonics.n_ions, size), dtype=complex)
    for l in range(1, max(HARMONICS) + 1):
        n_plus, n_minus = harmonics.quadratic[l], harmonics.quadratic[-l]
        ell_plus, ell_minus = harmonics.spin_linear[l], harmonics.spin_linear[-l]
        quad += (n_plus @ omega @ n_minus - n_minus @ omega @ n_plus) / (l * mu)
        xx += ell_plus @ omega @ ell_minus.T / (l * mu)
        sdf += (n_plus @ omega @ ell_minus.T - n_minus @ omega @ ell_plus.T).T / (l * mu)
    np.fill_diagonal(xx, 0.0)

    G_sq = np.sum(harmonics.g ** 2 * np.abs(harmonics.A) ** 2, axis=1)
    scale = max(np.max(np.abs(harmonics.delta), initial=0.0),
                np.max(np.abs(harmonics.g * harmonics.A), initial=0.0),
                np.max(np.abs(harmonics.f), initial=0.0))
    ratio = float(mu / scale) if scale > 0 else float("inf")
    if ratio < 10:
        logger.warning(f"[FLOQUET] mu is only {ratio:.2f}x the largest internal rate; "
                       f"leading-order corrections are unreliable")

    return FloquetCorrections(spin_spin_xx=xx, mode_shift=quad[n_modes:, :n_modes], extra_sdf=sdf[:, :n_modes],
                              G_sq=G_sq, quadratic_correction=quad, mu=mu, scale_ratio=ratio)


def mode_shift_closed_form(g: np.ndarray, A: np.ndarray, mu: float) -> np.ndarray:
    pair = g * A
    return -pair.conj() @ pair / (4 * mu)


def spin_spin_closed_form(f: np.ndarray, uz: np.ndarray, phi: np.ndarray, mu: float) -> np.ndarray:
    w = uz * np.exp(-1j * phi)[None, :]
    xx = -np.einsum('n,nj,nk->jk', f ** 2, w.conj(), w) / (2 * mu)
    np.fill_diagonal(xx, 0.0)
    return xx


def cr_sdf_pa_closed_form(g: np.ndarray, B: np.ndarray, f: np.ndarray, uz: np.ndarray, phi: np.ndarray,
                          theta: float, mu: float) -> np.ndarray:
    """Coefficient of a_m s_j generated by the PA hopping and SDF at 2 mu."""
    mixed = np.einsum('nm,n,nj->jm', g * B, f, uz)
    return -np.exp(-1j * theta) * np.exp(-1j * phi)[:, None] * mixed / (2 * mu)


def _normal_mode_frequencies(quadratic: np.ndarray) -> np.ndarray:
    n_modes = quadratic.shape[0] // 2
    evals = np.linalg.eigvals(symplectic_form(n_modes) @ quadratic)
    if np.max(np.abs(evals.imag)) > 1e-9 * max(1.0, np.max(np.abs(evals))):
        raise AboveThresholdError("Quadratic Hamiltonian has no stable normal form",
                                  diagnostics={"eigenvalues": evals.tolist()})
    return np.sort(np.abs(evals.real))[::2]


def rwa_frequencies(harmonics: HarmonicDecomposition) -> np.ndarray:
    return _normal_mode_frequencies(harmonics.quadratic[0])


def effective_frequencies(harmonics: HarmonicDecomposition, mu: float,
                          corrections: Optional[FloquetCorrections] = None) -> np.ndarray:
    corrections = corrections or floquet_corrections(harmonics, mu)
    return _normal_mode_frequencies(harmonics.quadratic[0] + corrections.quadratic_correction)


def single_mode_effective_frequency(delta: float, g_A: float, G_sq: float, mu: float) -> float:
    return float(np.sqrt((delta + G_sq / (4 * mu)) ** 2 - g_A ** 2))


def gain_with_cr(delta_eff: float, g: float, mu: float, compensated: bool) -> float:
    """Amplification e^{-2r} with G^2 = g^2 and the laser set for a target delta'."""
    if compensated:
        shifted = np.sqrt(delta_eff ** 2 + g ** 2)
    else:
        shifted = np.sqrt(delta_eff ** 2 + g ** 2) + g ** 2 / (4 * mu)
    if shifted - g <= 0:
        raise AboveThresholdError(f"g={g:.6g} rad/s drives the mode above threshold",
                                  diagnostics={"delta_eff": delta_eff, "g": g, "mu": mu})
    return float(np.sqrt((shifted + g) / (shifted - g)))


def compensated_detuning(delta_eff: float, g: float, mu: float) -> float:
    """Laser detuning that restores delta' once the counter-rotating shift is included."""
    return float(np.sqrt(delta_eff ** 2 + g ** 2) - g ** 2 / (4 * mu))


def floquet_gain_table(g_values: Sequence[float], tau_values: Sequence[float], mu: float) -> np.ndarray:
    """Rows (g/2pi Hz, tau s, gain uncompensated, gain compensated)."""
    rows = []
    for tau in tau_values:
        delta_eff = 2 * np.pi / tau
        for g in g_values:
            rows.append((g / (2 * np.pi), tau, gain_with_cr(delta_eff, g, mu, compensated=False),
                         gain_with_cr(delta_eff, g, mu, compensated=True)))
    return np.array(rows, dtype=float).reshape(-1, 4)


def compare_reference(reference: np.ndarray, mu: float, compensated: bool = False) -> Dict[str, object]:
    """Relative deviation of the predicted gain from reference rows (g/2pi Hz, tau s, gain)."""
    reference = np.atleast_2d(np.asarray(reference, dtype=float))
    if reference.shape[1] != 3:
        raise AnalysisError(f"reference rows need 3 columns, got {reference.shape[1]}")
    predicted = np.array([gain_with_cr(2 * np.pi / tau, 2 * np.pi * g_hz, mu, compensated)
                          for g_hz, tau, _ in reference])
    relative = np.abs(predicted - reference[:, 2]) / np.abs(reference[:, 2])
    logger.info(f"[FLOQUET] reference overlay: {relative.size} points, max deviation {relative.max():.3%}")
    return {"predicted": predicted, "relative": relative, "max_relative": float(relative.max())}


def composition_weights(order: int) -> List[float]:
    """Step fractions of the symmetric triple-jump composition of a second-order step."""
    if order < 2 or order % 2:
        raise ValueError(f"order must be even and >= 2, got {order}")
    weights = [1.0]
    for k in range(1, order // 2):
        root = 2 ** (1 / (2 * k + 1))
        z1 = 1 / (2 - root)
        z0 = -root / (2 - root)
        weights = [z1 * w for w in weights] + [z0 * w for w in weights] + [z1 * w for w in weights]
    return weights


@dataclass(frozen=True)
class OracleResult:
    frequencies: np.ndarray     # (K,) rad/s
    monodromy: np.ndarray       # (2K+1, 2K+1)
    displacement: np.ndarray    # (2K,) forced displacement after one period
    step_error: float


def _generator(harmonics: HarmonicDecomposition, omega: np.ndarray, t: float, mu: float,
               spins: Optional[Sequence[float]]) -> np.ndarray:
    size = omega.shape[0]
    quad, lin = harmonics.hamiltonian_at(t, mu, spins)
    gen = np.zeros((size + 1, size + 1), dtype=complex)
    gen[:size, :size] = -1j * omega @ quad
    gen[:size, size] = -1j * omega @ lin
    return gen


def _propagate(harmonics: HarmonicDecomposition, mu: float, spins, steps: int, weights: List[float]) -> np.ndarray:
    omega = symplectic_form(harmonics.n_modes)
    period = 2 * np.pi / mu
    h = period / steps
    total = np.identity(2 * harmonics.n_modes + 1, dtype=complex)
    for k in range(steps):
        t = k * h
        for w in weights:
            total = linalg.expm(w * h * _generator(harmonics, omega, t + 0.5 * w * h, mu, spins)) @ total
            t += w * h
    return total


def symplectic_oracle(harmonics: HarmonicDecomposition, mu: float, spins: Optional[Sequence[float]] = None,
                      steps_per_period: int = 4096, order: int = 4, tol: float = 1e-9) -> OracleResult:
    """Exact one-period evolution of the motion with spins frozen along their coupling axis."""
    weights = composition_weights(order)
    coarse = _propagate(harmonics, mu, spins, steps_per_period, weights)
    fine = _propagate(harmonics, mu, spins, 2 * steps_per_period, weights)
    step_error = float(np.max(np.abs(fine - coarse)))
    if step_error > tol:
        raise ConvergenceError(f"Step halving changed the monodromy by {step_error:.3e} (> {tol:g})",
                               diagnostics={"steps_per_period": steps_per_period, "order": order})

    size = 2 * harmonics.n_modes
    period = 2 * np.pi / mu
    multipliers = np.linalg.eigvals(fine[:size, :size])
    frequencies = np.sort(np.abs(np.angle(multipliers)) / period)[::2]
    logger.debug(f"[FLOQUET] oracle: step error {step_error:.2e}, frequencies {frequencies}")
    return OracleResult(frequencies=frequencies, monodromy=fine, displacement=fine[:size, size],
                        step_error=step_error)
