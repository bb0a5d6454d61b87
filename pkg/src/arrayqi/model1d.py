"""Generic 1D light-matter interface: reflectivity, cooperativity and efficiency identities.

All rates are in units of the single-atom decay rate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError


@dataclass(frozen=True)
class InterfaceParams:
    """Target-mode rate, loss rate, collective shift, two-photon detuning and control."""

    gamma_target: float
    gamma_loss: float = 0.0
    collective_shift: float = 0.0
    two_photon_detuning: complex = 0.0
    control_amplitude: complex = 0.0

    def __post_init__(self):
        vals = [self.gamma_target, self.gamma_loss, self.collective_shift,
                self.two_photon_detuning, self.control_amplitude]
        if not all(np.isfinite(v) for v in vals):
            raise ValueError("all rates must be finite")
        if not self.gamma_target > 0:
            raise ValueError("gamma_target must be positive")
        if self.gamma_loss < 0:
            raise ValueError("gamma_loss must be non-negative")

    @property
    def total_rate(self) -> float:
        return self.gamma_target + self.gamma_loss


def cooperativity(p: InterfaceParams) -> float:
    if p.gamma_loss == 0:
        raise DomainError("cooperativity diverges for gamma_loss = 0")
    return p.gamma_target / p.gamma_loss


def resonant_reflectivity(C: float) -> float:
    if C < 0:
        raise DomainError("cooperativity must be non-negative")
    if np.isinf(C):
        return 1.0
    return C / (C + 1.0)


def reflection_amplitude(p: InterfaceParams, delta_p) -> complex:
    """Amplitude reflectivity; the transmission amplitude is 1 + r."""
    return -p.gamma_target / (p.total_rate + 2j * (p.collective_shift - np.asarray(delta_p)))


def radiated_fraction(p: InterfaceParams, t_max: float, dt: float) -> float:
    """Energy emitted into the target mode by a unit initial dipole, integrated to t_max."""
    rate = p.total_rate
    if dt > 0.1 / rate:
        raise DomainError("time step too coarse for the decay rate")
    t = np.linspace(0.0, t_max, int(np.ceil(t_max / dt)) + 1)
    flux = p.gamma_target * np.exp(-rate * t)
    return float(np.trapezoid(flux, t))


def absorbed_fraction(p: InterfaceParams, delta_p: float) -> float:
    """Steady-state power dissipated by the dipole under a CW target-mode drive."""
    half = p.total_rate / 2.0
    det = delta_p - p.collective_shift
    return float(p.gamma_target * half / (2.0 * (half**2 + det**2)))


def g2_zero(r0: float) -> float:
    """Equal-time intensity correlation of transmitted light under blockade."""
    return float(abs(1.0 - r0**2) ** 2)


def two_photon_params(p: InterfaceParams, delta_p: float) -> tuple[float, float]:
    """Effective spin decay rate and shift after eliminating the dipole."""
    z = abs(p.control_amplitude) ** 2 / (p.total_rate / 2.0 + 1j * (p.collective_shift - delta_p))
    return float(2.0 * z.real), float(z.imag)
