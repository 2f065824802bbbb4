import hashlib
import os
from typing import Any, Dict, Optional, Tuple, Type

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from src.drive_config import PADriveSpec, SDFSpec
from src.errors import ConfigError
from src.trap_model import TrapConfig

TWO_PI = 2 * np.pi

# keys given in Hz (or Hz/m^2) in the file and stored as angular rates
FREQUENCY_KEYS = {
    "trap": ("axial_freq", "rotation_freq", "radial_freqs"),
    "sdf": ("mu", "detuning"),
    "pa": ("omega_p", "g"),
    "analysis": ("target_delta_eff",),
    "floquet": ("mu", "g_values"),
}


def parse_theta_grid(text: str) -> np.ndarray:
    """'start:stop:count' (radians, stop included) -> grid."""
    parts = str(text).split(":")
    if len(parts) != 3:
        raise ValueError(f"theta grid must look like start:stop:count, got {text!r}")
    start, stop, count = float(parts[0]), float(parts[1]), int(parts[2])
    if count < 1:
        raise ValueError("theta grid needs at least one point")
    return np.linspace(start, stop, count)


class RunSettings(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    seed: int = Field(default=0, ge=0)
    restarts: int = Field(default=4, ge=1)
    workers: int = Field(default=1, ge=1)
    max_iterations: int = Field(default=20000, ge=1)


class AnalysisSettings(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    mode_mixing_threshold: float = Field(default=0.1, ge=0)
    histogram_bins: int = Field(default=40, ge=1)
    scaffold_mad_factor: float = Field(default=3.0, gt=0)
    radial_cutoff: Optional[float] = Field(default=None, gt=0)
    lamb_dicke_warn: float = Field(default=0.3, gt=0)
    theta_grid: str = "0:6.283185307179586:73"
    # rad/s; when set, the detuning is chosen to reach this delta'
    target_delta_eff: Optional[float] = None
    reference_z: float = 0.0
    # rad; when set, bilayer runs retune delta_k so the layers sit this far apart in phase
    interlayer_phase: Optional[float] = None

    @field_validator("theta_grid")
    @classmethod
    def _check_grid(cls, value):
        parse_theta_grid(value)
        return value

    def theta_values(self) -> np.ndarray:
        return parse_theta_grid(self.theta_grid)


class FloquetSettings(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    mu: float = Field(default=TWO_PI * 3.045e6, gt=0)
    g_values: Tuple[float, ...] = tuple(TWO_PI * np.linspace(0.0, 40e3, 41))
    tau_values: Tuple[float, ...] = ()
    steps_per_period: int = Field(default=4096, ge=16)
    integrator_order: int = Field(default=4, ge=2)
    oracle_tol: float = Field(default=1e-9, gt=0)

    @field_validator("tau_values")
    @classmethod
    def _positive_taus(cls, value):
        if any(t <= 0 for t in value):
            raise ValueError("tau_values must be positive")
        return value


class Config:
    def __init__(self, config_path: str = "config.yaml"):
        self.config_path = config_path
        self.data: Dict[str, Any] = {}
        self.load()

    def load(self):
        if not os.path.exists(self.config_path):
            raise ConfigError(f"Config file not found: {self.config_path}")
        try:
            with open(self.config_path, 'r', encoding='utf-8') as f:
                self.data = yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"Config file {self.config_path} is not valid YAML: {e}") from e
        if not isinstance(self.data, dict):
            raise ConfigError(f"Config file {self.config_path} must hold a mapping of sections")

    def get(self, key_path: str, default=None):
        keys = key_path.split('.')
        value = self.data
        for key in keys:
            if isinstance(value, dict):
                value = value.get(key)
                if value is None:
                    return default
            else:
                return default
        return value

    def section(self, name: str) -> Dict[str, Any]:
        value = self.data.get(name) or {}
        if not isinstance(value, dict):
            raise ConfigError(f"Section '{name}' must be a mapping")
        return dict(value)

    def has_section(self, name: str) -> bool:
        return bool(self.data.get(name))

    def content_hash(self) -> str:
        with open(self.config_path, 'rb') as f:
            return hashlib.sha256(f.read()).hexdigest()

    def _build(self, model: Type[BaseModel], name: str, skip: Tuple[str, ...] = ()):
        values = _to_angular(name, {k: v for k, v in self.section(name).items() if k not in skip})
        try:
            return model(**values)
        except ValidationError as e:
            details = "; ".join(
                f"{name}.{'.'.join(str(part) for part in err['loc']) or '<section>'}: {err['msg']}"
                for err in e.errors())
            raise ConfigError(f"Invalid configuration: {details}") from e
        except (TypeError, ValueError) as e:
            raise ConfigError(f"Invalid configuration in section '{name}': {e}") from e

    def trap_config(self) -> TrapConfig:
        if not self.has_section("trap"):
            raise ConfigError("Config needs a 'trap' section")
        return self._build(TrapConfig, "trap")

    def sdf_spec(self) -> SDFSpec:
        if not self.has_section("sdf"):
            raise ConfigError("This analysis needs an 'sdf' section")
        return self._build(SDFSpec, "sdf", skip=("target_mode",) if self.sdf_targets_com else ())

    @property
    def sdf_targets_com(self) -> bool:
        """sdf.target_mode: com picks the axial centre-of-mass mode once the spectrum is known."""
        return str(self.get("sdf.target_mode", "")).strip().lower() == "com"

    def pa_spec(self) -> PADriveSpec:
        if not self.has_section("pa"):
            raise ConfigError("This analysis needs a 'pa' section")
        return self._build(PADriveSpec, "pa")

    def run_settings(self) -> RunSettings:
        return self._build(RunSettings, "run")

    def analysis_settings(self) -> AnalysisSettings:
        return self._build(AnalysisSettings, "analysis")

    def floquet_settings(self) -> FloquetSettings:
        return self._build(FloquetSettings, "floquet")

    @property
    def log_level(self) -> str:
        return self.get('logging.level', 'INFO')

    @property
    def log_to_file(self) -> bool:
        return bool(self.get('logging.to_file', False))

    @property
    def log_file_path(self) -> str:
        return self.get('logging.file_path', './logs/toolkit.log')


def _to_angular(name: str, values: Dict[str, Any]) -> Dict[str, Any]:
    for key in FREQUENCY_KEYS.get(name, ()):
        value = values.get(key)
        if value is None:
            continue
        try:
            if isinstance(value, (list, tuple)):
                values[key] = tuple(TWO_PI * float(v) for v in value)
            else:
                values[key] = TWO_PI * float(value)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"{name}.{key}: expected a number in Hz, got {value!r}") from e
    return values
