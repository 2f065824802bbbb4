import logging
from dataclasses import dataclass, replace
from typing import List, Tuple

import numpy as np
from scipy import linalg

from src.errors import ModeInstabilityError
from src.trap_model import CrystalEquilibrium, TrapConfig, TrapKind, build_effective_potential
from src.units import HBAR

logger = logging.getLogger(__name__)

AXES = {"x": 0, "y": 1, "z": 2}
ZERO_MODE_FRACTION = 1e-6
DRUMHEAD_WEIGHT = 0.9
DECOUPLING_TOLERANCE = 1e-9
INSTABILITY_TOLERANCE = 1e-7


@dataclass(frozen=True)
class ModeSpectrum:
    """Normal modes sorted by descending frequency.

    eigenvectors[n, j, alpha] is u_nj^alpha, normalized so that
    sum_{j,alpha} |u_nj^alpha|^2 = 1, with the largest-magnitude component of
    each mode real and positive.
    """

    frequencies: np.ndarray          # (3N,) rad/s
    eigenvectors: np.ndarray         # (3N, N, 3) complex
    zero_point_lengths: np.ndarray   # (3N,) m
    branch_labels: Tuple[str, ...]
    flagged: np.ndarray              # (3N,) bool, near-zero modes
    residuals: np.ndarray            # (3N,) relative eigen residuals
    axial_freq: float
    ion_mass: float

    @property
    def n_modes(self) -> int:
        return self.frequencies.size

    @property
    def n_ions(self) -> int:
        return self.eigenvectors.shape[1]

    def uz(self, mode: int) -> np.ndarray:
        return self.eigenvectors[mode, :, 2]

    def rephased(self, phases) -> "ModeSpectrum":
        """Same spectrum with u_n -> u_n e^{i chi_n}; observables must not change."""
        factors = np.exp(1j * np.asarray(phases, dtype=float))
        return replace(self, eigenvectors=self.eigenvectors * factors[:, None, None])

    def usable_modes(self) -> np.ndarray:
        return np.flatnonzero(~self.flagged)


def hessian(config: TrapConfig, eq: CrystalEquilibrium) -> np.ndarray:
    """Potential Hessian at equilibrium in units of m wz^2, layout [x..., y..., z...]."""
    return build_effective_potential(config).hessian(eq.flat_internal())


def _lorentz_block(n: int, coupling: float) -> np.ndarray:
    zn = np.zeros((n, n))
    off = coupling * np.identity(n)
    return np.block([[zn, off], [-off, zn]])


def _first_order_modes(stiffness: np.ndarray, damping: np.ndarray):
    """Positive-frequency solutions of r'' = -K r + C r' via the first-order form."""
    size = stiffness.shape[0]
    first_order = np.block([[np.zeros((size, size)), np.identity(size)], [-stiffness, damping]])
    evals, evects = np.linalg.eig(first_order)

    order = np.argsort(-evals.imag)
    evals = evals[order][:size]
    evects = evects[:, order][:, :size]

    scale = max(1.0, np.max(np.abs(evals)))
    unstable = np.flatnonzero(np.abs(evals.real) > INSTABILITY_TOLERANCE * scale)
    if unstable.size:
        k = int(unstable[0])
        raise ModeInstabilityError(
            f"Mode {k} has growth rate {evals[k].real:.3e} (internal units)",
            mode_index=k, diagnostics={"eigenvalue": complex(evals[k])})

    residuals = np.linalg.norm(first_order @ evects - evects * evals, axis=0) / (
        np.linalg.norm(first_order, 2) * np.linalg.norm(evects, axis=0))
    # e^{+i w t} solutions; the annihilation-operator amplitude is the conjugate
    return evals.imag, np.conj(evects[:size, :]), residuals


def _symmetric_modes(stiffness: np.ndarray):
    evals, evects = linalg.eigh(stiffness)
    scale = max(1.0, np.max(np.abs(evals)))
    negative = np.flatnonzero(evals < -INSTABILITY_TOLERANCE * scale)
    if negative.size:
        k = int(negative[0])
        raise ModeInstabilityError(
            f"Mode {k} has imaginary frequency (curvature {evals[k]:.3e}, internal units)",
            mode_index=k, diagnostics={"curvature": float(evals[k])})
    residuals = np.linalg.norm(stiffness @ evects - evects * evals, axis=0) / np.linalg.norm(stiffness, 2)
    return np.sqrt(np.clip(evals, 0.0, None)), evects.astype(complex), residuals


def _fix_gauge(u: np.ndarray) -> np.ndarray:
    u = u / np.linalg.norm(u)
    k = np.argmax(np.abs(u))
    return u * np.exp(-1j * np.angle(u[k]))


def _branch_label(u_modes: np.ndarray) -> str:
    weight_z = np.sum(np.abs(u_modes[:, 2]) ** 2)
    if weight_z >= DRUMHEAD_WEIGHT:
        return "drumhead"
    if weight_z <= 1 - DRUMHEAD_WEIGHT:
        return "planar"
    return "mixed"


def compute_modes(config: TrapConfig, eq: CrystalEquilibrium) -> ModeSpectrum:
    n = eq.n_ions
    k = hessian(config, eq)

    if config.trap_kind == TrapKind.PAUL:
        freqs, vectors, residuals = _symmetric_modes(k)
    else:
        coupling = (2 * config.signed_rotation_freq - config.cyclotron_freq) / config.axial_freq
        cross = np.max(np.abs(k[:2 * n, 2 * n:]))
        if cross <= DECOUPLING_TOLERANCE * np.max(np.abs(k)):
            logger.info("[MODES] axial and planar motion decouple; solving blocks separately")
            fz, vz, rz = _symmetric_modes(k[2 * n:, 2 * n:])
            fp, vp, rp = _first_order_modes(k[:2 * n, :2 * n], _lorentz_block(n, coupling))
            freqs = np.concatenate([fp, fz])
            vectors = np.zeros((3 * n, 3 * n), dtype=complex)
            vectors[:2 * n, :2 * n] = vp
            vectors[2 * n:, 2 * n:] = vz
            residuals = np.concatenate([rp, rz])
        else:
            damping = np.zeros((3 * n, 3 * n))
            damping[:2 * n, :2 * n] = _lorentz_block(n, coupling)
            freqs, vectors, residuals = _first_order_modes(k, damping)

    order = np.argsort(-freqs, kind="stable")
    freqs = freqs[order]
    vectors = vectors[:, order]
    residuals = residuals[order]

    eigenvectors = np.empty((3 * n, n, 3), dtype=complex)
    for mode in range(3 * n):
        eigenvectors[mode] = _fix_gauge(vectors[:, mode]).reshape(3, n).T

    frequencies = freqs * config.axial_freq
    flagged = freqs < ZERO_MODE_FRACTION
    with np.errstate(divide='ignore'):
        lengths = np.where(flagged, 0.0, np.sqrt(HBAR / (2 * config.ion_mass * np.where(flagged, 1.0, frequencies))))
    labels = tuple(_branch_label(eigenvectors[mode]) for mode in range(3 * n))

    if flagged.any():
        logger.warning(f"[MODES] {int(flagged.sum())} near-zero mode(s) flagged and excluded from squeezing")
    logger.info(f"[MODES] {3 * n} modes, {labels.count('drumhead')} drumhead, "
                f"max residual {np.max(residuals):.2e}")

    return ModeSpectrum(
        frequencies=frequencies,
        eigenvectors=eigenvectors,
        zero_point_lengths=lengths,
        branch_labels=labels,
        flagged=flagged,
        residuals=residuals,
        axial_freq=config.axial_freq,
        ion_mass=config.ion_mass,
    )


def mode_displacement_operator(spectrum: ModeSpectrum, ion: int, axis: str) -> List[Tuple[int, complex, complex]]:
    """Expansion of the displacement operator: alpha_j = sum_n (c_n a_n + c_n^* a_n^dagger)."""
    if not 0 <= ion < spectrum.n_ions:
        raise IndexError(f"ion index {ion} out of range for {spectrum.n_ions} ions")
    if axis not in AXES:
        raise IndexError(f"axis must be one of {sorted(AXES)}, got {axis!r}")
    column = spectrum.eigenvectors[:, ion, AXES[axis]]
    coefficients = spectrum.zero_point_lengths * column
    return [(n, complex(c), complex(np.conj(c))) for n, c in enumerate(coefficients)]


def ground_state_variance(spectrum: ModeSpectrum, ion: int, axis: str) -> float:
    return float(sum(abs(c) ** 2 for _, c, _ in mode_displacement_operator(spectrum, ion, axis)))


def com_mode_index(spectrum: ModeSpectrum) -> int:
    """Index of the axial centre-of-mass mode (largest uniform z overlap)."""
    n = spectrum.n_ions
    overlap = np.abs(spectrum.eigenvectors[:, :, 2].sum(axis=1)) / np.sqrt(n)
    return int(np.argmax(overlap))


def lamb_dicke_ratio(delta_k: float, spectrum: ModeSpectrum) -> float:
    return float(delta_k * np.max(spectrum.zero_point_lengths))
