import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import linalg, optimize

from src.drive_config import IonDrivePhases, PADriveSpec, SDFSpec
from src.errors import AboveThresholdError, AnalysisError
from src.normal_modes import ModeSpectrum

logger = logging.getLogger(__name__)

# z enters with weight 1, planar axes with -1/2
QUADRUPOLE_WEIGHTS = np.array([-0.5, -0.5, 1.0])


@dataclass(frozen=True)
class OverlapMatrices:
    A: np.ndarray        # (3N, 3N) complex, symmetric
    B: np.ndarray        # (3N, 3N) complex, Hermitian
    g: np.ndarray        # (3N, 3N) rad/s
    omega_p: float       # rad s^-1 m^-2

    @property
    def n_modes(self) -> int:
        return self.A.shape[0]


@dataclass(frozen=True)
class AmplificationSolution:
    mode: int
    r: float                 # negative below threshold for delta > 0
    phi_sq: float            # squeezed quadrature
    delta: float             # rad/s, mu - omega_n
    delta_eff: float         # rad/s
    g_nn: float
    A_nn: complex
    S: np.ndarray            # (N,) complex
    v: np.ndarray            # (N,) complex, S u e^{i phi_j}
    mixing_mass: float

    @property
    def gain(self) -> float:
        return float(np.exp(-2 * self.r))

    @property
    def gain_db(self) -> float:
        return float(10 * np.log10(self.gain))


def compute_overlaps(spectrum: ModeSpectrum, pa: PADriveSpec, reference_mode: int = 0) -> OverlapMatrices:
    u = spectrum.eigenvectors
    A = np.einsum('nja,mja,a->nm', u, u, QUADRUPOLE_WEIGHTS)
    B = np.einsum('nja,mja,a->nm', u.conj(), u, QUADRUPOLE_WEIGHTS)
    omega_p = pa.resolve_omega_p(spectrum, reference_mode)
    lengths = spectrum.zero_point_lengths
    g = omega_p * np.outer(lengths, lengths)
    logger.info(f"[PA] overlaps for {spectrum.n_modes} modes, omega_p={omega_p:.6g} rad/s/m^2")
    return OverlapMatrices(A=A, B=B, g=g, omega_p=omega_p)


def mode_mixing_mass(overlaps: OverlapMatrices, mode: int) -> float:
    """Sum of |A_nm| over m != n."""
    row = np.abs(overlaps.A[mode])
    return float(row.sum() - row[mode])


def _b2_coefficient(r: float, phi: float, delta: float, g: float, A: complex, theta: float) -> complex:
    c, s = np.cosh(r), np.sinh(r)
    return (delta * s * c * np.exp(-1j * phi)
            + 0.5 * g * (A * c ** 2 * np.exp(-1j * theta) + np.conj(A) * s ** 2 * np.exp(1j * (theta - 2 * phi))))


def b2_residual(r: float, phi: float, delta: float, g: float, A: complex, theta: float) -> float:
    """|b^2 coefficient| relative to the Hamiltonian scale."""
    scale = max(abs(delta), abs(g * A), np.finfo(float).tiny)
    return float(abs(_b2_coefficient(r, phi, delta, g, A, theta)) / scale)


def _check_threshold(delta: float, g: float, A: complex):
    coupling = abs(g * A)
    if abs(delta) <= coupling:
        raise AboveThresholdError(
            f"|delta|={abs(delta):.6g} rad/s is not above g|A|={coupling:.6g} rad/s",
            diagnostics={"delta": delta, "g_A": coupling})


def solve_bogoliubov(delta: float, g: float, A: complex, theta: float) -> Tuple[float, float]:
    """Squeezing parameter and quadrature (r, phi) that remove the b^2 term."""
    _check_threshold(delta, g, A)
    phi0 = theta - float(np.angle(A))
    r0 = 0.5 * float(np.arctanh(-g * abs(A) / delta))
    if g == 0 or abs(A) == 0:
        return r0, phi0

    def equations(x):
        value = _b2_coefficient(x[0], x[1], delta, g, A, theta) / max(abs(delta), abs(g * A))
        return [value.real, value.imag]

    out = optimize.root(equations, [r0, phi0], method='hybr', options={'xtol': 1e-15})
    start = b2_residual(r0, phi0, delta, g, A, theta)
    refined = b2_residual(out.x[0], out.x[1], delta, g, A, theta) if out.success else np.inf
    if refined < start:
        return float(out.x[0]), float(out.x[1])
    return r0, phi0


def effective_detuning(delta: float, g: float, A: complex) -> float:
    """delta' = sign(delta) sqrt(delta^2 - g^2 |A|^2)."""
    _check_threshold(delta, g, A)
    return float(np.sign(delta) * np.sqrt(delta ** 2 - (g * abs(A)) ** 2))


def detuning_for_target(delta_eff: float, g: float, A: complex) -> float:
    """Bare detuning that yields the requested delta'."""
    if delta_eff == 0:
        raise AnalysisError("target effective detuning must be nonzero")
    return float(np.sign(delta_eff) * np.sqrt(delta_eff ** 2 + (g * abs(A)) ** 2))


def diagonalize_pa_numeric(delta: float, g: float, A: complex, theta: float) -> float:
    """Normal-mode frequency of -delta a^dag a + g/2 (A e^{-i theta} a^2 + h.c.).

    Uses the Cholesky construction for positive-definite bosonic forms, so it
    does not rely on the analytic Bogoliubov solution.
    """
    _check_threshold(delta, g, A)
    pair = g * np.conj(A) * np.exp(1j * theta)
    h = np.array([[-delta, pair], [np.conj(pair), -delta]])
    sign = -1.0 if delta > 0 else 1.0
    k = linalg.cholesky(sign * h)
    bos = np.diag([1.0, -1.0])
    energies = linalg.eigvalsh(k @ bos @ k.conj().T)
    return float(np.sign(delta) * np.max(energies))


def scale_factors(r: float, phi_sq: float, phases: IonDrivePhases, spectrum: ModeSpectrum,
                  mode: int) -> Tuple[np.ndarray, np.ndarray]:
    """Per-ion S_nj and the amplified coupling vector v_nj = S_nj u_nj^z e^{i phi_j}."""
    uz = spectrum.uz(mode)
    if phases.n_ions != uz.size:
        raise AnalysisError(f"phases for {phases.n_ions} ions, spectrum has {uz.size}")
    exponent = phi_sq + 2 * phases.phi + 2 * np.angle(uz)
    S = np.cosh(r) - np.exp(-1j * exponent) * np.sinh(r)
    v = S * uz * np.exp(1j * phases.phi)
    return S, v


def amplify_mode(spectrum: ModeSpectrum, overlaps: OverlapMatrices, phases: IonDrivePhases,
                 mode: int, delta: float, theta: float, mixing_threshold: float = 0.1) -> AmplificationSolution:
    if spectrum.flagged[mode]:
        raise AnalysisError(f"Mode {mode} is a near-zero mode and cannot be squeezed")
    mixing = mode_mixing_mass(overlaps, mode)
    if mixing > mixing_threshold:
        logger.warning(f"[PA] mode {mode} mixing mass {mixing:.3g} exceeds {mixing_threshold}; "
                       f"single-mode treatment neglects it")

    g_nn = float(overlaps.g[mode, mode])
    A_nn = complex(overlaps.A[mode, mode])
    r, phi_sq = solve_bogoliubov(delta, g_nn, A_nn, theta)
    delta_eff = effective_detuning(delta, g_nn, A_nn)
    S, v = scale_factors(r, phi_sq, phases, spectrum, mode)

    solution = AmplificationSolution(mode=mode, r=r, phi_sq=phi_sq, delta=delta, delta_eff=delta_eff,
                                     g_nn=g_nn, A_nn=A_nn, S=S, v=v, mixing_mass=mixing)
    logger.info(f"[PA] mode {mode}: r={r:.6g}, gain={solution.gain_db:.3f} dB, "
                f"delta'={delta_eff / (2 * np.pi):.6g} Hz")
    return solution


def amplify_from_specs(spectrum: ModeSpectrum, sdf: SDFSpec, pa: PADriveSpec, phases: IonDrivePhases,
                       mode: Optional[int] = None, mixing_threshold: float = 0.1) -> AmplificationSolution:
    mode = sdf.target_mode if mode is None else mode
    overlaps = compute_overlaps(spectrum, pa, reference_mode=mode)
    return amplify_mode(spectrum, overlaps, phases, mode, sdf.detuning_for(spectrum, mode),
                        pa.theta, mixing_threshold)


def bilayer_scale_magnitudes(r: float, theta: float, interlayer_phase: float) -> Tuple[float, float]:
    """(|S_top|, |S_bottom|) for a real uniform mode, phases referenced to the bottom layer."""
    def magnitude(phi_layer):
        return float(np.sqrt(np.cosh(2 * r) - np.cos(theta + 2 * phi_layer) * np.sinh(2 * r)))
    return magnitude(-interlayer_phase), magnitude(0.0)
