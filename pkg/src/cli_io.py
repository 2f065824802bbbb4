import argparse
import hashlib
import json
import logging
import sys
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np

from src import __version__
from src.app_manager import AppManager
from src.drive_config import derive_phases
from src.errors import EXIT_CODE_HELP, EXIT_OK, EXIT_UNEXPECTED, ConfigError, ToolkitError
from src.exports import read_csv, save_equilibrium, save_overlaps, save_spectrum, write_csv, write_json
from src.floquet import compare_reference, floquet_gain_table
from src.logger import setup_logging
from src.normal_modes import com_mode_index
from src.parametric import diagonalize_pa_numeric, mode_mixing_mass
from src.spin_interactions import (SCAFFOLD, TOP, apply_scaling, assign_layers, bilayer_histograms,
                                   bilayer_sweep, coupling_matrix, imaginary_sum_check, interlayer_phase,
                                   matched_delta_k, scale_family)

logger = logging.getLogger(__name__)

REFERENCE_COLUMNS = ("g_over_2pi_Hz", "tau_s", "gain")


@dataclass(frozen=True)
class RunManifest:
    subcommand: str
    config_path: str
    out_dir: str
    seed: int
    version: str
    config_hash: str

    def to_dict(self) -> Dict[str, object]:
        return asdict(self)

    @property
    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    def write(self) -> Path:
        path = Path(self.out_dir) / "manifest.json"
        write_json(path, {**self.to_dict(), "digest": self.digest})
        return path


def _parse_bool(text: str) -> bool:
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _parse_seed(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def run_equilibrium(app: AppManager, args) -> None:
    save_equilibrium(app.equilibrium(), app.out_dir)


def run_modes(app: AppManager, args) -> None:
    save_equilibrium(app.equilibrium(), app.out_dir)
    save_spectrum(app.spectrum(), app.out_dir)


def run_overlap(app: AppManager, args) -> None:
    run_modes(app, args)
    spectrum = app.spectrum()
    overlaps = app.overlaps()
    save_overlaps(overlaps.A, app.out_dir)
    mode = app.target_mode
    com = com_mode_index(spectrum)
    write_json(app.out_dir / "overlap.json", {
        "target_mode": mode,
        "A_target": overlaps.A[mode, mode],
        "mixing_mass_target": mode_mixing_mass(overlaps, mode),
        "com_mode": com,
        "mixing_mass_com": mode_mixing_mass(overlaps, com),
        "omega_p": overlaps.omega_p,
    })


def run_squeeze(app: AppManager, args) -> None:
    run_modes(app, args)
    solution = app.amplification()
    numeric = diagonalize_pa_numeric(solution.delta, solution.g_nn, solution.A_nn, app.pa().theta)
    write_json(app.out_dir / "amplification.json", {
        "mode": solution.mode,
        "r": solution.r,
        "phi_sq": solution.phi_sq,
        "delta_Hz": solution.delta / (2 * np.pi),
        "delta_eff_Hz": solution.delta_eff / (2 * np.pi),
        "delta_eff_numeric_Hz": numeric / (2 * np.pi),
        "g_nn_Hz": solution.g_nn / (2 * np.pi),
        "A_nn": solution.A_nn,
        "gain": solution.gain,
        "gain_db": solution.gain_db,
        "mixing_mass": solution.mixing_mass,
    })
    rows = np.column_stack([np.arange(solution.S.size), solution.S.real, solution.S.imag, np.abs(solution.S),
                            solution.v.real, solution.v.imag])
    write_csv(app.out_dir / "scale_factors.csv", ["ion", "re_S", "im_S", "abs_S", "re_v", "im_v"], rows)


def run_couplings(app: AppManager, args) -> None:
    run_modes(app, args)
    spectrum = app.spectrum()
    coupling = coupling_matrix(spectrum, app.sdf(), app.phases(), app.target_mode, app.detuning())
    solution = app.amplification()
    scaled = apply_scaling(coupling, solution.S)
    j, k = np.nonzero(~np.identity(coupling.n_ions, dtype=bool))
    rows = np.column_stack([j, k, coupling.real[j, k], scaled.real[j, k], scaled.J.imag[j, k]])
    write_csv(app.out_dir / "couplings.csv", ["j", "k", "J", "J_scaled", "im_J_scaled"], rows)
    write_json(app.out_dir / "couplings.json", {
        "mode": coupling.mode,
        "mu_Hz": coupling.mu / (2 * np.pi),
        "delta_Hz": coupling.delta / (2 * np.pi),
        "kind": coupling.kind,
        "gain_db": solution.gain_db,
        "imaginary_sum_ratio": imaginary_sum_check(coupling),
        "units": "rad/s",
    })


def run_bilayer(app: AppManager, args) -> None:
    run_modes(app, args)
    eq, spectrum, sdf = app.equilibrium(), app.spectrum(), app.sdf()
    analysis = app.analysis
    layers = assign_layers(eq, analysis.scaffold_mad_factor, analysis.radial_cutoff)
    if analysis.interlayer_phase is not None:
        sdf = sdf.model_copy(update={"delta_k": matched_delta_k(layers, sdf.delta_k, analysis.interlayer_phase)})
    # PA phase measured against the lower layer
    phases = derive_phases(sdf, eq, reference_z=layers.medians[1])
    mode, delta = app.target_mode, app.detuning()
    coupling = coupling_matrix(spectrum, sdf, phases, mode, delta)
    scales = scale_family(spectrum, app.overlaps(), phases, mode, delta)
    sweep = bilayer_sweep(coupling, scales, layers, app.theta_grid(args.theta_grid))
    theta = app.pa().theta
    histograms = bilayer_histograms(coupling, scales(theta), layers, analysis.histogram_bins)

    codes = {TOP: 0, "bottom": 1, SCAFFOLD: 2}
    write_csv(app.out_dir / "layers.csv", ["ion", "z", "layer"],
              np.column_stack([np.arange(eq.n_ions), eq.z, [codes[label] for label in layers.labels]]))
    write_csv(app.out_dir / "sweep.csv", ["theta", "mean_top", "mean_bottom", "mean_inter"], sweep.as_columns())
    edges = histograms["edges"]
    write_csv(app.out_dir / "histogram.csv",
              ["edge_low", "edge_high", "intra_off", "inter_off", "intra_on", "inter_on"],
              np.column_stack([edges[:-1], edges[1:], histograms["intra_off"], histograms["inter_off"],
                               histograms["intra_on"], histograms["inter_on"]]))
    write_json(app.out_dir / "bilayer.json", {
        "mode": mode,
        "interlayer_phase": interlayer_phase(layers, sdf.delta_k),
        "delta_k": sdf.delta_k,
        "layer_codes": codes,
        "layer_medians_m": layers.medians,
        "histogram_theta": theta,
        "units": "rad/s",
    })


def _load_reference(path: str) -> np.ndarray:
    try:
        header, data = read_csv(path)
    except OSError as e:
        raise ConfigError(f"Reference CSV not readable: {path}: {e}") from e
    missing = [c for c in REFERENCE_COLUMNS if c not in header]
    if missing:
        raise ConfigError(f"Reference CSV {path} lacks columns {missing}")
    return data[:, [header.index(c) for c in REFERENCE_COLUMNS]]


def run_floquet_gain(app: AppManager, args) -> None:
    settings = app.floquet
    reference = _load_reference(args.reference_csv) if args.reference_csv else None
    taus = set(settings.tau_values)
    if reference is not None:
        taus.update(reference[:, 1].tolist())
    if not taus:
        raise ConfigError("floquet-gain needs floquet.tau_values or a reference CSV")

    table = floquet_gain_table(settings.g_values, sorted(taus), settings.mu)
    write_csv(app.out_dir / "gain_table.csv",
              ["g_over_2pi_Hz", "tau_s", "gain_uncompensated", "gain_compensated"], table)
    summary = {"mu_Hz": settings.mu / (2 * np.pi), "tau_values_s": sorted(taus), "compensated": args.compensated}
    if reference is not None:
        overlay = compare_reference(reference, settings.mu, compensated=args.compensated)
        write_csv(app.out_dir / "reference_overlay.csv",
                  ["g_over_2pi_Hz", "tau_s", "gain_reference", "gain_predicted", "relative"],
                  np.column_stack([reference, overlay["predicted"], overlay["relative"]]))
        summary["max_relative"] = overlay["max_relative"]
    write_json(app.out_dir / "floquet_gain.json", summary)


SUBCOMMANDS: Dict[str, Callable] = {
    "equilibrium": run_equilibrium,
    "modes": run_modes,
    "overlap": run_overlap,
    "squeeze": run_squeeze,
    "couplings": run_couplings,
    "bilayer": run_bilayer,
    "floquet-gain": run_floquet_gain,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default="config.yaml", help="YAML config file (default: config.yaml)")
    common.add_argument("--out", default="./output", help="output directory (default: ./output)")
    common.add_argument("--seed", type=_parse_seed, help="override run.seed")
    common.add_argument("--workers", type=int, help="override run.workers")
    common.add_argument("--mode-index", help="target mode index, or 'com' for the axial centre-of-mass mode")
    common.add_argument("--theta-grid", help="PA phase grid start:stop:count in radians")
    common.add_argument("--reference-csv", help="reference gains with columns g_over_2pi_Hz,tau_s,gain")
    common.add_argument("--compensated", type=_parse_bool, default=False,
                        help="compare the reference against the compensated detuning (default: false)")
    common.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="override logging.level")

    parser = argparse.ArgumentParser(
        prog="main.py",
        description="Parametric amplification of spin-motion coupling in trapped-ion crystals.",
        epilog=EXIT_CODE_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        sub.add_parser(name, parents=[common], epilog=EXIT_CODE_HELP,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logger_root = setup_logging(log_level=args.log_level or "INFO")

    logger_root.info("=" * 60)
    logger_root.info(f"[CLI] {args.subcommand} (version {__version__})")
    logger_root.info("=" * 60)

    app = AppManager(out_dir=args.out, seed=args.seed, workers=args.workers)
    try:
        app.initialize(args.config)
        if args.log_level is None or app.config.log_to_file:
            setup_logging(log_level=args.log_level or app.config.log_level, log_to_file=app.config.log_to_file,
                          log_file_path=app.config.log_file_path)
        app.select_mode(args.mode_index)
        SUBCOMMANDS[args.subcommand](app, args)
        RunManifest(subcommand=args.subcommand, config_path=args.config, out_dir=args.out,
                    seed=app.run.seed, version=__version__, config_hash=app.config.content_hash()).write()
    except ToolkitError as e:
        logger.error(f"[CLI] {type(e).__name__}: {e}")
        if e.diagnostics:
            logger.debug(f"[CLI] diagnostics: {e.diagnostics}")
        return e.exit_code
    except Exception as e:
        logger.error(f"[CLI] unexpected failure: {e}", exc_info=True)
        return EXIT_UNEXPECTED

    logger.info(f"[CLI] outputs written to {args.out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
