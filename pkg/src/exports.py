import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np

from src.normal_modes import ModeSpectrum
from src.trap_model import CrystalEquilibrium, Frame, TrapConfig

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"


def _atomic_write(path: Path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, 'w', encoding='utf-8', newline='\n') as f:
            f.write(text)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise
    logger.debug(f"[EXPORT] wrote {path}")


def _to_plain(value: Any):
    if isinstance(value, dict):
        return {str(k): _to_plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_to_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _to_plain(value.tolist())
    if isinstance(value, (complex, np.complexfloating)):
        return {"re": float(value.real), "im": float(value.imag)}
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if hasattr(value, "value") and isinstance(getattr(value, "value"), str):
        return value.value
    return value


def write_json(path, data: Dict[str, Any]):
    # json emits repr() of floats, which round-trips exactly
    _atomic_write(path, json.dumps(_to_plain(data), indent=2, sort_keys=True) + "\n")


def read_json(path) -> Dict[str, Any]:
    with open(path, 'r', encoding='utf-8') as f:
        return json.load(f)


def write_csv(path, header: Sequence[str], rows):
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    if rows.size and rows.shape[1] != len(header):
        raise ValueError(f"{len(header)} columns in header, {rows.shape[1]} in data")
    lines = [",".join(header)]
    lines += [",".join(FLOAT_FORMAT % v for v in row) for row in rows if row.size]
    _atomic_write(path, "\n".join(lines) + "\n")


def read_csv(path) -> Tuple[List[str], np.ndarray]:
    with open(path, 'r', encoding='utf-8') as f:
        header = f.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return header, data


def save_equilibrium(eq: CrystalEquilibrium, out_dir) -> Path:
    out_dir = Path(out_dir)
    rows = np.column_stack([np.arange(eq.n_ions), eq.positions])
    write_csv(out_dir / "equilibrium.csv", ["ion", "x", "y", "z"], rows)
    write_json(out_dir / "equilibrium.json", {
        "frame": eq.frame.value,
        "energy": eq.potential_energy,
        "gradient_norm": eq.gradient_norm,
        "seed": eq.seed,
        "restart_energies": list(eq.restart_energies),
    })
    return out_dir / "equilibrium.csv"


def load_equilibrium(out_dir, config: TrapConfig) -> CrystalEquilibrium:
    out_dir = Path(out_dir)
    _, rows = read_csv(out_dir / "equilibrium.csv")
    meta = read_json(out_dir / "equilibrium.json")
    positions = rows[np.argsort(rows[:, 0]), 1:4]
    if positions.shape[0] != config.n_ions:
        raise ValueError(f"equilibrium file has {positions.shape[0]} ions, config expects {config.n_ions}")
    return CrystalEquilibrium(
        positions=positions,
        frame=Frame(meta["frame"]),
        potential_energy=meta["energy"],
        gradient_norm=meta["gradient_norm"],
        seed=meta["seed"],
        units=config.units,
        restart_energies=tuple(meta.get("restart_energies", ())),
    )


def _interleave(vectors: np.ndarray) -> np.ndarray:
    """(3N, N, 3) complex -> (3N, 6N) with re/im interleaved."""
    flat = vectors.reshape(vectors.shape[0], -1)
    return np.stack([flat.real, flat.imag], axis=-1).reshape(flat.shape[0], -1)


def save_spectrum(spectrum: ModeSpectrum, out_dir) -> Path:
    out_dir = Path(out_dir)
    weight_z = np.sum(np.abs(spectrum.eigenvectors[:, :, 2]) ** 2, axis=1)
    rows = np.column_stack([np.arange(spectrum.n_modes), spectrum.frequencies / (2 * np.pi),
                            spectrum.zero_point_lengths, weight_z])
    write_csv(out_dir / "modes.csv", ["mode", "frequency_Hz", "zero_point_length_m", "z_weight"], rows)
    write_json(out_dir / "modes.json", {
        "frequencies_Hz": spectrum.frequencies / (2 * np.pi),
        "eigenvectors": _interleave(spectrum.eigenvectors),
        "n_ions": spectrum.n_ions,
        "zero_point_lengths_m": spectrum.zero_point_lengths,
        "branch_labels": list(spectrum.branch_labels),
        "flagged": spectrum.flagged,
        "residuals": spectrum.residuals,
        "axial_freq_Hz": spectrum.axial_freq / (2 * np.pi),
        "ion_mass": spectrum.ion_mass,
    })
    return out_dir / "modes.json"


def load_spectrum(out_dir) -> ModeSpectrum:
    meta = read_json(Path(out_dir) / "modes.json")
    n = meta["n_ions"]
    packed = np.asarray(meta["eigenvectors"], dtype=float).reshape(3 * n, 3 * n, 2)
    vectors = (packed[..., 0] + 1j * packed[..., 1]).reshape(3 * n, n, 3)
    return ModeSpectrum(
        frequencies=2 * np.pi * np.asarray(meta["frequencies_Hz"], dtype=float),
        eigenvectors=vectors,
        zero_point_lengths=np.asarray(meta["zero_point_lengths_m"], dtype=float),
        branch_labels=tuple(meta["branch_labels"]),
        flagged=np.asarray(meta["flagged"], dtype=bool),
        residuals=np.asarray(meta["residuals"], dtype=float),
        axial_freq=2 * np.pi * meta["axial_freq_Hz"],
        ion_mass=meta["ion_mass"],
    )


def save_overlaps(A: np.ndarray, out_dir) -> Path:
    n_modes = A.shape[0]
    n, m = np.meshgrid(np.arange(n_modes), np.arange(n_modes), indexing="ij")
    rows = np.column_stack([n.ravel(), m.ravel(), A.real.ravel(), A.imag.ravel(), np.abs(A).ravel()])
    path = Path(out_dir) / "overlaps.csv"
    write_csv(path, ["n", "m", "re_A", "im_A", "abs_A"], rows)
    return path
