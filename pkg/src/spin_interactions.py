import logging
from dataclasses import dataclass, replace
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.cluster.vq import kmeans2

from src.drive_config import GateKind, IonDrivePhases, SDFSpec, mode_coupling_strengths
from src.errors import AnalysisError
from src.normal_modes import ModeSpectrum
from src.parametric import OverlapMatrices, amplify_mode
from src.trap_model import CrystalEquilibrium

logger = logging.getLogger(__name__)

TOP, BOTTOM, SCAFFOLD = "top", "bottom", "scaffold"
# layer medians must sit this many robust standard deviations apart
BIMODAL_RATIO = 4.0
MAD_TO_SIGMA = 1.4826


@dataclass(frozen=True)
class CouplingMatrix:
    """Single-mode Ising couplings, H = sum_{j != k} Re(J_jk) s_j s_k over ordered pairs."""

    J: np.ndarray          # (N, N) complex, zero diagonal
    mode: int
    scaled: bool
    mu: float              # rad/s
    delta: float           # rad/s
    kind: GateKind

    @property
    def real(self) -> np.ndarray:
        return self.J.real

    @property
    def n_ions(self) -> int:
        return self.J.shape[0]


@dataclass(frozen=True)
class LayerAssignment:
    labels: Tuple[str, ...]
    threshold_z: float                 # m, midpoint between layer medians
    medians: Tuple[float, float]       # m, (top, bottom)

    def indices(self, label: str) -> np.ndarray:
        return np.flatnonzero(np.asarray(self.labels) == label)


@dataclass(frozen=True)
class BilayerSweep:
    theta: np.ndarray
    mean_top: np.ndarray
    mean_bottom: np.ndarray
    mean_inter: np.ndarray

    def as_columns(self) -> np.ndarray:
        return np.column_stack([self.theta, self.mean_top, self.mean_bottom, self.mean_inter])


def coupling_matrix(spectrum: ModeSpectrum, sdf: SDFSpec, phases: IonDrivePhases,
                    mode: Optional[int] = None, delta: Optional[float] = None) -> CouplingMatrix:
    mode = sdf.target_mode if mode is None else mode
    if delta is None:
        delta = sdf.detuning_for(spectrum, mode)
    if delta == 0:
        raise AnalysisError(f"Zero detuning from mode {mode}; single-mode couplings diverge")
    f = mode_coupling_strengths(sdf, spectrum)[mode]
    u = spectrum.uz(mode) * np.exp(1j * phases.phi)
    J = f ** 2 * np.outer(u, u.conj()) / delta
    np.fill_diagonal(J, 0.0)
    logger.debug(f"[ISING] mode {mode}: f={f:.6g} rad/s, delta={delta:.6g} rad/s")
    return CouplingMatrix(J=J, mode=mode, scaled=False, mu=float(spectrum.frequencies[mode] + delta), delta=delta,
                          kind=sdf.kind)


def apply_scaling(coupling: CouplingMatrix, S: np.ndarray) -> CouplingMatrix:
    """J_jk -> S_j S_k J_jk as a complex product; Re of the result is what enters the Hamiltonian."""
    S = np.asarray(S)
    if S.shape != (coupling.n_ions,):
        raise AnalysisError(f"scale factors of shape {S.shape} for {coupling.n_ions} ions")
    return replace(coupling, J=np.outer(S, S) * coupling.J, scaled=True)


def imaginary_sum_check(coupling: CouplingMatrix, tol: float = 1e-9) -> float:
    """Relative size of sum_{j != k} Im J_jk, which must cancel for a Hermitian coupling."""
    total = np.sum(np.abs(coupling.J))
    if total == 0:
        return 0.0
    ratio = float(abs(np.sum(coupling.J.imag)) / total)
    if ratio > tol:
        logger.warning(f"[ISING] imaginary parts do not cancel over pairs (relative {ratio:.3e})")
    return ratio


def ising_phase_oracle(f: float, u: np.ndarray, delta: float, spins: Sequence[int], t: float) -> float:
    """Geometric phase of a spin configuration under -delta a^dag a + (F a + h.c.).

    F = f sum_j u_j s_j; the displacement closes at t = 2 pi k / delta.
    """
    force = f * np.dot(u, np.asarray(spins, dtype=float))
    return float(-abs(force) ** 2 * (delta * t - np.sin(delta * t)) / delta ** 2)


def two_ion_entangling_phase(f: float, u: np.ndarray, delta: float, t: float) -> float:
    phase = {(a, b): ising_phase_oracle(f, u, delta, (a, b), t) for a in (1, -1) for b in (1, -1)}
    return (phase[(1, 1)] + phase[(-1, -1)] - phase[(1, -1)] - phase[(-1, 1)]) / 4


def assign_layers(eq: CrystalEquilibrium, mad_factor: float = 3.0,
                  radial_cutoff: Optional[float] = None) -> LayerAssignment:
    z = eq.z
    extent = max(np.ptp(eq.positions[:, :2], axis=0).max(), eq.units.length)
    if eq.n_ions < 2 or np.ptp(z) <= 1e-6 * extent:
        raise AnalysisError("Crystal is a single plane; no layers to assign",
                            diagnostics={"z_histogram": _histogram(z)})

    centroids, cluster = kmeans2(z.reshape(-1, 1), np.array([[z.min()], [z.max()]]),
                                 minit='matrix', missing='raise')
    top_cluster = int(np.argmax(centroids[:, 0]))
    labels = np.where(cluster == top_cluster, TOP, BOTTOM).astype(object)

    medians = {}
    for label in (TOP, BOTTOM):
        members = labels == label
        if members.sum() == 0:
            raise AnalysisError(f"Layer {label} is empty", diagnostics={"z_histogram": _histogram(z)})
        median = float(np.median(z[members]))
        mad = _mad(z[members])
        medians[label] = median
        labels[members & (np.abs(z - median) > mad_factor * mad) & (mad > 0)] = SCAFFOLD
    if radial_cutoff is not None:
        labels[np.hypot(eq.positions[:, 0], eq.positions[:, 1]) > radial_cutoff] = SCAFFOLD

    top, bottom = z[labels == TOP], z[labels == BOTTOM]
    if top.size == 0 or bottom.size == 0:
        raise AnalysisError("No layer ions left after scaffold removal",
                            diagnostics={"z_histogram": _histogram(z)})
    separation = medians[TOP] - medians[BOTTOM]
    spread = MAD_TO_SIGMA * max(_mad(top), _mad(bottom))
    if separation <= BIMODAL_RATIO * spread:
        raise AnalysisError(
            f"z distribution is not bimodal: layer separation {separation:.3e} m vs robust spread {spread:.3e} m",
            diagnostics={"z_histogram": _histogram(z)})

    assignment = LayerAssignment(labels=tuple(labels), threshold_z=0.5 * (medians[TOP] + medians[BOTTOM]),
                                 medians=(medians[TOP], medians[BOTTOM]))
    logger.info(f"[LAYERS] top={top.size}, bottom={bottom.size}, "
                f"scaffold={int(np.sum(labels == SCAFFOLD))}, separation={medians[TOP] - medians[BOTTOM]:.4e} m")
    return assignment


def _mad(values: np.ndarray) -> float:
    return float(np.median(np.abs(values - np.median(values))))


def _histogram(z: np.ndarray, bins: int = 20) -> Dict[str, list]:
    counts, edges = np.histogram(z, bins=bins)
    return {"edges": edges.tolist(), "counts": counts.tolist()}


def interlayer_phase(layers: LayerAssignment, delta_k: float) -> float:
    """Phi = dk (z_top - z_bottom); the top layer then sits at phase -Phi."""
    top, bottom = layers.medians
    return float(delta_k * (top - bottom))


def matched_delta_k(layers: LayerAssignment, delta_k: float, target_phase: float = np.pi / 2) -> float:
    """Wavevector nearest delta_k whose interlayer phase equals target_phase modulo 2 pi."""
    separation = layers.medians[0] - layers.medians[1]
    target = target_phase % (2 * np.pi)
    turns = max(int(round((delta_k * separation - target) / (2 * np.pi))), 0)
    if target == 0 and turns == 0:
        turns = 1
    matched = (target + 2 * np.pi * turns) / separation
    logger.info(f"[LAYERS] delta_k {delta_k:.6g} -> {matched:.6g} 1/m for interlayer phase {target:.4f} rad")
    return float(matched)


def _pair_masks(layers: LayerAssignment):
    labels = np.asarray(layers.labels)
    top = labels == TOP
    bottom = labels == BOTTOM
    off_diagonal = ~np.identity(labels.size, dtype=bool)
    return (np.outer(top, top) & off_diagonal,
            np.outer(bottom, bottom) & off_diagonal,
            np.outer(top, bottom) | np.outer(bottom, top))


def layer_means(J: np.ndarray, layers: LayerAssignment) -> Tuple[float, float, float]:
    """Mean Re J over ordered (intra-top, intra-bottom, inter) pairs, scaffold excluded."""
    real = np.real(J)
    return tuple(float(real[mask].mean()) for mask in _pair_masks(layers))


def scale_family(spectrum: ModeSpectrum, overlaps: OverlapMatrices, phases: IonDrivePhases,
                 mode: int, delta: float) -> Callable[[float], np.ndarray]:
    def scales(theta: float) -> np.ndarray:
        return amplify_mode(spectrum, overlaps, phases, mode, delta, theta).S
    return scales


def bilayer_sweep(coupling: CouplingMatrix, scales: Callable[[float], np.ndarray],
                  layers: LayerAssignment, theta_grid: np.ndarray) -> BilayerSweep:
    if len(layers.labels) != coupling.n_ions:
        raise AnalysisError(f"{len(layers.labels)} layer labels for {coupling.n_ions} ions")
    theta_grid = np.asarray(theta_grid, dtype=float)
    means = np.array([layer_means(apply_scaling(coupling, scales(theta)).J, layers) for theta in theta_grid])
    logger.info(f"[LAYERS] swept {theta_grid.size} PA phases")
    return BilayerSweep(theta=theta_grid, mean_top=means[:, 0], mean_bottom=means[:, 1], mean_inter=means[:, 2])


def bilayer_histograms(coupling: CouplingMatrix, S: np.ndarray, layers: LayerAssignment,
                       bins: int = 40) -> Dict[str, np.ndarray]:
    """Counts of Re J over shared bin edges for intra/inter pairs with the drive off and on."""
    top, bottom, inter = _pair_masks(layers)
    intra = top | bottom
    off = coupling.real
    on = apply_scaling(coupling, S).real
    edges = np.histogram_bin_edges(np.concatenate([off[intra | inter], on[intra | inter]]), bins=bins)
    return {
        "edges": edges,
        "intra_off": np.histogram(off[intra], bins=edges)[0],
        "inter_off": np.histogram(off[inter], bins=edges)[0],
        "intra_on": np.histogram(on[intra], bins=edges)[0],
        "inter_on": np.histogram(on[inter], bins=edges)[0],
    }
