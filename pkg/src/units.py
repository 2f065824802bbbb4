"""Internal unit system for crystal calculations.

Lengths are measured in l0 = (q^2 / (4 pi eps0 m wz^2))^(1/3), times in 1/wz and
energies in m wz^2 l0^2, so the Coulomb energy of a pair is 1/r and the
axial confinement is z^2/2.
"""
from dataclasses import dataclass

import numpy as np
from scipy import constants


BE9_MASS = 9.012182 * constants.atomic_mass
ELEMENTARY_CHARGE = constants.elementary_charge
HBAR = constants.hbar


def characteristic_length(charge: float, mass: float, axial_freq: float) -> float:
    coulomb = charge ** 2 / (4 * np.pi * constants.epsilon_0)
    return float(np.cbrt(coulomb / (mass * axial_freq ** 2)))


@dataclass(frozen=True)
class UnitSystem:
    length: float   # m
    time: float     # s
    energy: float   # J
    mass: float     # kg

    @classmethod
    def for_ion(cls, charge: float, mass: float, axial_freq: float) -> "UnitSystem":
        length = characteristic_length(charge, mass, axial_freq)
        return cls(
            length=length,
            time=1.0 / axial_freq,
            energy=mass * axial_freq ** 2 * length ** 2,
            mass=mass,
        )

    @property
    def force(self) -> float:
        return self.energy / self.length
