import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.errors import AnalysisError
from src.normal_modes import ModeSpectrum, lamb_dicke_ratio
from src.trap_model import CrystalEquilibrium
from src.units import HBAR

logger = logging.getLogger(__name__)


class GateKind(str, Enum):
    LIGHT_SHIFT = "light_shift"
    MS_PHASE_INSENSITIVE = "ms_phase_insensitive"
    MS_PHASE_SENSITIVE = "ms_phase_sensitive"

    @property
    def spin_axis(self) -> str:
        return "z" if self == GateKind.LIGHT_SHIFT else "x"


class SDFSpec(BaseModel):
    """Spin-dependent force along +z.

    strength is the force amplitude F0 in newtons for the light-shift gate and
    the effective Rabi rate in rad/s for both MS gates. Give either the beat
    note mu or its detuning from the target mode.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: GateKind
    strength: float = Field(ge=0)
    delta_k: float = Field(gt=0)
    mu: Optional[float] = Field(default=None, gt=0)
    detuning: Optional[float] = None
    target_mode: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _one_frequency(self):
        if (self.mu is None) == (self.detuning is None):
            raise ValueError("give exactly one of mu or detuning")
        return self

    def resolve_mu(self, spectrum: ModeSpectrum) -> float:
        if self.mu is not None:
            return self.mu
        _check_mode(spectrum, self.target_mode)
        return float(spectrum.frequencies[self.target_mode] + self.detuning)

    def detuning_for(self, spectrum: ModeSpectrum, mode: Optional[int] = None) -> float:
        """delta_n = mu - omega_n."""
        mode = self.target_mode if mode is None else mode
        _check_mode(spectrum, mode)
        return float(self.resolve_mu(spectrum) - spectrum.frequencies[mode])


class PADriveSpec(BaseModel):
    """Parametric drive on the axial curvature.

    omega_p is in rad s^-1 m^-2 so that g_nm = omega_p l_n l_m is in rad/s;
    alternatively g fixes g_nn of the SDF target mode.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    omega_p: Optional[float] = Field(default=None, ge=0)
    g: Optional[float] = Field(default=None, ge=0)
    theta: float = 0.0

    @model_validator(mode="after")
    def _one_strength(self):
        if (self.omega_p is None) == (self.g is None):
            raise ValueError("give exactly one of omega_p or g")
        return self

    def resolve_omega_p(self, spectrum: ModeSpectrum, mode: int) -> float:
        if self.omega_p is not None:
            return self.omega_p
        _check_mode(spectrum, mode)
        if self.g == 0:
            return 0.0
        length = spectrum.zero_point_lengths[mode]
        if length == 0:
            raise AnalysisError(f"Mode {mode} is flagged as near-zero; g cannot be referenced to it")
        return float(self.g / length ** 2)


@dataclass(frozen=True)
class IonDrivePhases:
    phi: np.ndarray               # (N,) rad, phase entering the drive
    spin_axis: Tuple[str, ...]    # per ion
    raw_phi: np.ndarray           # (N,) rad, -dk (z0 - z_ref) before local-frame absorption
    kind: GateKind
    reference_z: float = 0.0

    @property
    def n_ions(self) -> int:
        return self.phi.size


def _check_mode(spectrum: ModeSpectrum, mode: int):
    if not 0 <= mode < spectrum.n_modes:
        raise AnalysisError(f"mode index {mode} out of range for {spectrum.n_modes} modes")


def derive_phases(sdf: SDFSpec, eq: CrystalEquilibrium, reference_z: float = 0.0) -> IonDrivePhases:
    raw = -sdf.delta_k * (eq.z - reference_z)
    if sdf.kind == GateKind.MS_PHASE_SENSITIVE:
        # absorbed into the local spin frames
        phi = np.zeros_like(raw)
    else:
        phi = raw.copy()
    axis = sdf.kind.spin_axis
    logger.debug(f"[DRIVE] {sdf.kind.value}: phase spread {np.ptp(raw):.4g} rad, spin axis {axis}")
    return IonDrivePhases(phi=phi, spin_axis=(axis,) * eq.n_ions, raw_phi=raw,
                          kind=sdf.kind, reference_z=reference_z)


def mode_coupling_strengths(sdf: SDFSpec, spectrum: ModeSpectrum) -> np.ndarray:
    """Per-mode spin-motion coupling f_n in rad/s."""
    if sdf.kind == GateKind.LIGHT_SHIFT:
        return sdf.strength * spectrum.zero_point_lengths / (2 * HBAR)
    return sdf.strength * sdf.delta_k * spectrum.zero_point_lengths / 2


def motion_free_amplitude(sdf: SDFSpec) -> float:
    """Amplitude (rad/s) of the spin term with no motional operator."""
    if sdf.kind == GateKind.LIGHT_SHIFT:
        return sdf.strength / (HBAR * sdf.delta_k)
    return sdf.strength


def check_lamb_dicke(sdf: SDFSpec, spectrum: ModeSpectrum, warn_above: float = 0.3) -> float:
    ratio = lamb_dicke_ratio(sdf.delta_k, spectrum)
    if ratio > warn_above:
        logger.warning(f"[DRIVE] Lamb-Dicke ratio {ratio:.3f} exceeds {warn_above}; "
                       f"first-order expansion is unreliable")
    return ratio
