import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import optimize

from src.errors import ConvergenceError, UnstableConfinementError
from src.units import BE9_MASS, ELEMENTARY_CHARGE, UnitSystem

logger = logging.getLogger(__name__)

GRADIENT_TOLERANCE = 1e-10


class TrapKind(str, Enum):
    PENNING = "penning"
    PAUL = "paul_pseudopotential"


class Frame(str, Enum):
    LAB = "lab"
    ROTATING = "rotating"


class TrapConfig(BaseModel):
    """Physical trap description. Frequencies are angular (rad/s), SI otherwise."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    trap_kind: TrapKind
    axial_freq: float = Field(gt=0)
    n_ions: int = Field(ge=1)
    magnetic_field: Optional[float] = Field(default=None, gt=0)
    rotation_freq: Optional[float] = Field(default=None, gt=0)
    # +1: crystal rotates in the magnetron sense (the only stable one)
    rotation_sign: int = 1
    wall_strength: float = Field(default=0.0, ge=0)
    radial_freqs: Optional[Tuple[float, float]] = None
    anharmonic_c4: float = Field(default=0.0, ge=0)
    ion_mass: float = Field(default=BE9_MASS, gt=0)
    ion_charge: float = Field(default=ELEMENTARY_CHARGE, gt=0)

    @model_validator(mode="after")
    def _check_kind_fields(self):
        if self.rotation_sign not in (1, -1):
            raise ValueError("rotation_sign must be +1 or -1")
        if self.trap_kind == TrapKind.PENNING:
            if self.magnetic_field is None or self.rotation_freq is None:
                raise ValueError("penning traps need magnetic_field and rotation_freq")
        else:
            if self.radial_freqs is None:
                raise ValueError("paul_pseudopotential traps need radial_freqs")
            if min(self.radial_freqs) <= 0:
                raise ValueError("radial_freqs must be strictly positive")
        return self

    @property
    def cyclotron_freq(self) -> float:
        return self.ion_charge * self.magnetic_field / self.ion_mass

    @property
    def signed_rotation_freq(self) -> float:
        return self.rotation_sign * self.rotation_freq

    @property
    def units(self) -> UnitSystem:
        return UnitSystem.for_ion(self.ion_charge, self.ion_mass, self.axial_freq)

    @property
    def frame(self) -> Frame:
        return Frame.ROTATING if self.trap_kind == TrapKind.PENNING else Frame.LAB


@dataclass(frozen=True)
class CrystalEquilibrium:
    positions: np.ndarray       # (N, 3), meters
    frame: Frame
    potential_energy: float     # J
    gradient_norm: float        # N
    seed: int
    units: UnitSystem
    restart_energies: Tuple[float, ...] = ()   # J, one per restart

    @property
    def n_ions(self) -> int:
        return self.positions.shape[0]

    @property
    def z(self) -> np.ndarray:
        return self.positions[:, 2]

    def internal_positions(self) -> np.ndarray:
        return self.positions / self.units.length

    def flat_internal(self) -> np.ndarray:
        """Positions in l0 laid out as [x_1..x_N, y_1..y_N, z_1..z_N]."""
        return self.internal_positions().T.reshape(-1)


def planar_coefficients(config: TrapConfig) -> Tuple[float, float]:
    """Dimensionless planar stiffnesses (k_x, k_y) in units of m wz^2."""
    if config.trap_kind == TrapKind.PAUL:
        wx, wy = config.radial_freqs
        return (wx / config.axial_freq) ** 2, (wy / config.axial_freq) ** 2
    wr = config.signed_rotation_freq
    beta = wr * (config.cyclotron_freq - wr) / config.axial_freq ** 2 - 0.5
    return beta + config.wall_strength, beta - config.wall_strength


def check_stability(config: TrapConfig):
    kx, ky = planar_coefficients(config)
    if kx <= 0 or ky <= 0:
        raise UnstableConfinementError(
            f"Planar confinement not positive: k_x={kx:.6g}, k_y={ky:.6g}",
            diagnostics={"k_x": kx, "k_y": ky},
        )


class EffectivePotential:
    """Single-particle trap terms plus Coulomb, in internal units.

    Coordinates are flat vectors [x..., y..., z...] of length 3N measured in l0.
    """

    def __init__(self, config: TrapConfig):
        check_stability(config)
        self.config = config
        self.n_ions = config.n_ions
        self.kx, self.ky = planar_coefficients(config)
        self.kz = 1.0
        self.c4 = config.anharmonic_c4

    def _split(self, pos_array):
        n = self.n_ions
        return pos_array[0:n], pos_array[n:2 * n], pos_array[2 * n:]

    def _separations(self, pos_array):
        x, y, z = self._split(pos_array)
        dx = x.reshape((x.size, 1)) - x
        dy = y.reshape((y.size, 1)) - y
        dz = z.reshape((z.size, 1)) - z
        rsep = np.sqrt(dx ** 2 + dy ** 2 + dz ** 2)
        return dx, dy, dz, rsep

    def energy(self, pos_array) -> float:
        x, y, z = self._split(pos_array)
        dx, dy, dz, rsep = self._separations(pos_array)
        with np.errstate(divide='ignore'):
            vc = np.where(rsep != 0., 1 / rsep, 0)
        trap = 0.5 * np.sum(self.kx * x ** 2 + self.ky * y ** 2 + self.kz * z ** 2)
        return float(trap + self.c4 * np.sum(z ** 4) + 0.5 * np.sum(vc))

    __call__ = energy

    def gradient(self, pos_array) -> np.ndarray:
        x, y, z = self._split(pos_array)
        dx, dy, dz, rsep = self._separations(pos_array)
        with np.errstate(divide='ignore'):
            rsep3 = np.where(rsep != 0., rsep ** (-3), 0)
        gx = self.kx * x - np.sum(dx * rsep3, axis=1)
        gy = self.ky * y - np.sum(dy * rsep3, axis=1)
        gz = self.kz * z + 4 * self.c4 * z ** 3 - np.sum(dz * rsep3, axis=1)
        return np.hstack((gx, gy, gz))

    def hessian(self, pos_array) -> np.ndarray:
        x, y, z = self._split(pos_array)
        dx, dy, dz, rsep = self._separations(pos_array)
        with np.errstate(divide='ignore'):
            rsep5 = np.where(rsep != 0., rsep ** (-5), 0)
        rsq = rsep ** 2

        def diagonal_block(d, stiffness):
            off = (rsq - 3 * d ** 2) * rsep5
            return off + np.diag(stiffness - np.sum(off, axis=0))

        def cross_block(da, db):
            off = -3 * da * db * rsep5
            return off - np.diag(np.sum(off, axis=0))

        hxx = diagonal_block(dx, self.kx)
        hyy = diagonal_block(dy, self.ky)
        hzz = diagonal_block(dz, self.kz + 12 * self.c4 * z ** 2)
        hxy = cross_block(dx, dy)
        hxz = cross_block(dx, dz)
        hyz = cross_block(dy, dz)
        return np.block([[hxx, hxy, hxz], [hxy, hyy, hyz], [hxz, hyz, hzz]])

    def spheroid_semi_axes(self) -> np.ndarray:
        stiffness = np.array([self.kx, self.ky, self.kz])
        return np.cbrt(self.n_ions / stiffness)


def build_effective_potential(config: TrapConfig) -> EffectivePotential:
    return EffectivePotential(config)


def _random_guess(potential: EffectivePotential, rng: np.random.Generator) -> np.ndarray:
    n = potential.n_ions
    directions = rng.normal(size=(n, 3))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    radii = rng.uniform(size=(n, 1)) ** (1.0 / 3.0)
    points = directions * radii * potential.spheroid_semi_axes()
    return points.T.reshape(-1)


def _newton_polish(potential: EffectivePotential, x: np.ndarray, max_steps: int = 8) -> np.ndarray:
    best = x
    best_norm = np.linalg.norm(potential.gradient(x))
    for _ in range(max_steps):
        if best_norm <= GRADIENT_TOLERANCE * 1e-2:
            break
        step, *_ = np.linalg.lstsq(potential.hessian(best), potential.gradient(best), rcond=1e-12)
        candidate = best - step
        norm = np.linalg.norm(potential.gradient(candidate))
        if not norm < best_norm:
            break
        best, best_norm = candidate, norm
    return best


def _run_restart(potential: EffectivePotential, index: int, seed_seq: np.random.SeedSequence,
                 max_iterations: int):
    rng = np.random.default_rng(seed_seq)
    guess = _random_guess(potential, rng)
    out = optimize.minimize(potential.energy, guess, method='BFGS', jac=potential.gradient,
                            options={'gtol': GRADIENT_TOLERANCE, 'maxiter': max_iterations})
    x = _newton_polish(potential, out.x)
    grad_norm = float(np.linalg.norm(potential.gradient(x)))
    energy = potential.energy(x)
    logger.debug(f"[EQUILIBRIUM] restart {index}: energy={energy:.12g}, |grad|={grad_norm:.3e}, "
                 f"bfgs_iterations={out.nit}")
    return index, energy, grad_norm, x


def solve_equilibrium(config: TrapConfig, seed: int = 0, restarts: int = 4,
                      max_iterations: int = 20000, workers: int = 1) -> CrystalEquilibrium:
    if restarts < 1:
        raise ValueError("restarts must be at least 1")
    potential = build_effective_potential(config)
    seeds = np.random.SeedSequence(seed).spawn(restarts)

    logger.info(f"[EQUILIBRIUM] {config.trap_kind.value} trap, N={config.n_ions}, "
                f"k=({potential.kx:.6g}, {potential.ky:.6g}, 1), restarts={restarts}")

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            results = list(executor.map(
                lambda item: _run_restart(potential, item[0], item[1], max_iterations),
                enumerate(seeds)))
    else:
        results = [_run_restart(potential, i, s, max_iterations) for i, s in enumerate(seeds)]

    converged = [r for r in results if r[2] <= GRADIENT_TOLERANCE]
    if not converged:
        best_norm = min(r[2] for r in results)
        raise ConvergenceError(
            f"No restart reached |grad| <= {GRADIENT_TOLERANCE:g} (best {best_norm:.3e})",
            diagnostics={"gradient_norms": [r[2] for r in results],
                         "energies": [r[1] for r in results]},
        )

    # ties resolved by lowest restart index
    index, energy, grad_norm, x = min(converged, key=lambda r: (r[1], r[0]))
    units = config.units
    n = config.n_ions
    positions = x.reshape(3, n).T * units.length

    logger.info(f"[EQUILIBRIUM] best restart {index}: energy={energy:.12g} (internal), "
                f"|grad|={grad_norm:.3e}, converged {len(converged)}/{restarts}")

    return CrystalEquilibrium(
        positions=positions,
        frame=config.frame,
        potential_energy=energy * units.energy,
        gradient_norm=grad_norm * units.force,
        seed=seed,
        units=units,
        restart_energies=tuple(r[1] * units.energy for r in results),
    )


def equilibrium_energy(config: TrapConfig, positions: np.ndarray) -> float:
    """Potential energy (J) of SI positions (N, 3) under the config's potential."""
    units = config.units
    potential = build_effective_potential(config)
    flat = (np.asarray(positions) / units.length).T.reshape(-1)
    return potential.energy(flat) * units.energy

