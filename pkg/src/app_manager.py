import logging
from pathlib import Path
from typing import Optional

import numpy as np

from src.config import AnalysisSettings, Config, FloquetSettings, RunSettings, parse_theta_grid
from src.drive_config import IonDrivePhases, PADriveSpec, SDFSpec, check_lamb_dicke, derive_phases
from src.exports import load_equilibrium, load_spectrum, read_json
from src.normal_modes import ModeSpectrum, com_mode_index, compute_modes
from src.parametric import AmplificationSolution, OverlapMatrices, amplify_mode, compute_overlaps, \
    detuning_for_target
from src.trap_model import CrystalEquilibrium, TrapConfig, solve_equilibrium

logger = logging.getLogger(__name__)


class AppManager:
    """Lazily computed pipeline: config -> equilibrium -> modes -> drives.

    Stages already present in the output directory are reused when the
    manifest there was written for the same config content and seed.
    """

    def __init__(self, out_dir: str = "./output", seed: Optional[int] = None, workers: Optional[int] = None):
        self.out_dir = Path(out_dir)
        self._seed_override = seed
        self._workers_override = workers
        self.config: Optional[Config] = None
        self.trap: Optional[TrapConfig] = None
        self.run: Optional[RunSettings] = None
        self.analysis: Optional[AnalysisSettings] = None
        self._equilibrium: Optional[CrystalEquilibrium] = None
        self._spectrum: Optional[ModeSpectrum] = None
        self._overlaps: Optional[OverlapMatrices] = None
        self._mode_override: Optional[int] = None
        self.reusable = False

    def initialize(self, config_path: str = "config.yaml"):
        logger.info(f"[PIPELINE] loading {config_path}")
        self.config = Config(config_path)
        run = self.config.run_settings()
        updates = {}
        if self._seed_override is not None:
            updates["seed"] = self._seed_override
        if self._workers_override is not None:
            updates["workers"] = self._workers_override
        self.run = run.model_copy(update=updates) if updates else run
        self.analysis = self.config.analysis_settings()
        self.reusable = self._previous_run_matches()
        if self.reusable:
            logger.info(f"[PIPELINE] reusing artifacts in {self.out_dir}")

    def _previous_run_matches(self) -> bool:
        manifest = self.out_dir / "manifest.json"
        if not manifest.exists():
            return False
        try:
            previous = read_json(manifest)
        except (OSError, ValueError):
            return False
        return (previous.get("config_hash") == self.config.content_hash()
                and previous.get("seed") == self.run.seed)

    def trap_config(self) -> TrapConfig:
        if self.trap is None:
            self.trap = self.config.trap_config()
        return self.trap

    @property
    def floquet(self) -> FloquetSettings:
        return self.config.floquet_settings()

    def equilibrium(self) -> CrystalEquilibrium:
        if self._equilibrium is None:
            if self.reusable and (self.out_dir / "equilibrium.csv").exists():
                self._equilibrium = load_equilibrium(self.out_dir, self.trap_config())
            else:
                self._equilibrium = solve_equilibrium(self.trap_config(), seed=self.run.seed, restarts=self.run.restarts,
                                                      max_iterations=self.run.max_iterations,
                                                      workers=self.run.workers)
        return self._equilibrium

    def spectrum(self) -> ModeSpectrum:
        if self._spectrum is None:
            if self.reusable and (self.out_dir / "modes.json").exists():
                self._spectrum = load_spectrum(self.out_dir)
            else:
                self._spectrum = compute_modes(self.trap_config(), self.equilibrium())
        return self._spectrum

    def select_mode(self, mode: Optional[str]):
        """Override the target mode with an index or 'com'."""
        if mode is None:
            return
        self._mode_override = com_mode_index(self.spectrum()) if mode == "com" else int(mode)
        self._overlaps = None

    def sdf(self) -> SDFSpec:
        sdf = self.config.sdf_spec()
        if self._mode_override is None and self.config.sdf_targets_com:
            self._mode_override = com_mode_index(self.spectrum())
        if self._mode_override is not None:
            sdf = sdf.model_copy(update={"target_mode": self._mode_override})
        return sdf

    def pa(self) -> PADriveSpec:
        return self.config.pa_spec()

    @property
    def target_mode(self) -> int:
        return self.sdf().target_mode

    def phases(self) -> IonDrivePhases:
        sdf = self.sdf()
        check_lamb_dicke(sdf, self.spectrum(), self.analysis.lamb_dicke_warn)
        return derive_phases(sdf, self.equilibrium(), reference_z=self.analysis.reference_z)

    def overlaps(self) -> OverlapMatrices:
        if self._overlaps is None:
            self._overlaps = compute_overlaps(self.spectrum(), self.pa(), reference_mode=self.target_mode)
        return self._overlaps

    def detuning(self) -> float:
        """delta_n for the target mode, from the target delta' when one is configured."""
        mode = self.target_mode
        if self.analysis.target_delta_eff is not None:
            overlaps = self.overlaps()
            return detuning_for_target(self.analysis.target_delta_eff, overlaps.g[mode, mode],
                                       overlaps.A[mode, mode])
        return self.sdf().detuning_for(self.spectrum(), mode)

    def amplification(self, theta: Optional[float] = None) -> AmplificationSolution:
        theta = self.pa().theta if theta is None else theta
        return amplify_mode(self.spectrum(), self.overlaps(), self.phases(), self.target_mode,
                            self.detuning(), theta, self.analysis.mode_mixing_threshold)

    def mu(self) -> float:
        return float(self.spectrum().frequencies[self.target_mode] + self.detuning())

    def theta_grid(self, override: Optional[str] = None) -> np.ndarray:
        if override is None:
            return self.analysis.theta_values()
        return parse_theta_grid(override)
