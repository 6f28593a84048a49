"""
Closed-form add-drop microring resonator model.

With self-coupling coefficients ``r1``, ``r2`` and single-pass amplitude
transmission ``a``, the through (pass) and drop power transmissions at
round-trip phase ``phi`` are

    T_p = (r2² a² − 2 r1 r2 a cos φ + r1²) / (1 − 2 r1 r2 a cos φ + (r1 r2 a)²)
    T_d = (1 − r1²)(1 − r2²) a          / (1 − 2 r1 r2 a cos φ + (r1 r2 a)²)

The round-trip phase is ``2π n_eff(λ) L / λ`` plus the heater offset, with
first-order dispersion set by the group index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq

from .errors import DegenerateResonator, UnachievableQ

C_VACUUM = 299_792_458.0  # m/s
TWO_PI = 2.0 * math.pi

# Geometry of the 10 µm radius Si strip ring at 1.55 µm.
DEFAULT_GROUP_INDEX = 4.2
DEFAULT_RING_LENGTH = 62.8e-6
DEFAULT_WAVELENGTH = 1.55e-6
DEFAULT_EFF_INDEX = 2.4


@dataclass(frozen=True)
class RingGeometry:
    """
    Ring waveguide geometry.

    Parameters
    ----------
    length_L : float
        Ring circumference [m].
    group_index_ng : float
        Group index, sets the dispersion of the round-trip phase.
    eff_index_neff : float
        Effective index at ``resonance_wavelength``. Snapped on construction
        to ``m λ_res / L`` for the nearest integer order ``m``, so that the
        ring is exactly resonant at ``resonance_wavelength``.
    resonance_wavelength : float
        Designed resonance wavelength [m].
    """

    length_L: float = DEFAULT_RING_LENGTH
    group_index_ng: float = DEFAULT_GROUP_INDEX
    eff_index_neff: float = DEFAULT_EFF_INDEX
    resonance_wavelength: float = DEFAULT_WAVELENGTH

    def __post_init__(self) -> None:
        if not self.length_L > 0:
            raise ValueError(f"length_L must be positive, got {self.length_L}")
        if not self.group_index_ng >= 1:
            raise ValueError(f"group_index_ng must be >= 1, got {self.group_index_ng}")
        if not self.eff_index_neff >= 1:
            raise ValueError(f"eff_index_neff must be >= 1, got {self.eff_index_neff}")
        if not self.resonance_wavelength > 0:
            raise ValueError(
                f"resonance_wavelength must be positive, got {self.resonance_wavelength}"
            )
        order = max(1, round(self.eff_index_neff * self.length_L / self.resonance_wavelength))
        snapped = order * self.resonance_wavelength / self.length_L
        object.__setattr__(self, "eff_index_neff", snapped)

    @property
    def order(self) -> int:
        """Longitudinal mode order m at the resonance wavelength."""
        return round(self.eff_index_neff * self.length_L / self.resonance_wavelength)

    def at_wavelength(self, wavelength: float) -> "RingGeometry":
        """Same ring re-targeted to resonate at ``wavelength``."""
        return replace(self, resonance_wavelength=wavelength)


@dataclass(frozen=True)
class CouplerSet:
    r1: float
    r2: float
    a: float = 1.0

    def __post_init__(self) -> None:
        if not 0 < self.r1 < 1:
            raise ValueError(f"r1 must be in (0, 1), got {self.r1}")
        if not 0 < self.r2 < 1:
            raise ValueError(f"r2 must be in (0, 1), got {self.r2}")
        if not 0 < self.a <= 1:
            raise ValueError(f"a must be in (0, 1], got {self.a}")

    @property
    def round_trip_product(self) -> float:
        """r1·r2·a, the quantity that fixes the linewidth."""
        return self.r1 * self.r2 * self.a


@dataclass(frozen=True)
class MrrDevice:
    geometry: RingGeometry = field(default_factory=RingGeometry)
    couplers: CouplerSet = field(default_factory=lambda: CouplerSet(0.95, 0.95, 1.0))
    heater_phase: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "heater_phase", float(self.heater_phase) % TWO_PI)

    def with_heater(self, phase: float) -> "MrrDevice":
        return replace(self, heater_phase=phase)

    def at_wavelength(self, wavelength: float) -> "MrrDevice":
        return replace(self, geometry=self.geometry.at_wavelength(wavelength))


def _coeffs(dev: MrrDevice):
    c = dev.couplers
    return c.r1, c.r2, c.a


def drop_transmission(dev: MrrDevice, phi):
    """Fraction of input power exiting the drop port at round-trip phase ``phi``."""
    r1, r2, a = _coeffs(dev)
    rra = r1 * r2 * a
    phi = np.asarray(phi, dtype=float)
    out = (1 - r1**2) * (1 - r2**2) * a / (1 - 2 * rra * np.cos(phi) + rra**2)
    return out if out.ndim else float(out)


def pass_transmission(dev: MrrDevice, phi):
    """Fraction of input power exiting the through port at round-trip phase ``phi``."""
    r1, r2, a = _coeffs(dev)
    rra = r1 * r2 * a
    phi = np.asarray(phi, dtype=float)
    cos = np.cos(phi)
    out = (r2**2 * a**2 - 2 * rra * cos + r1**2) / (1 - 2 * rra * cos + rra**2)
    return out if out.ndim else float(out)


def drop_lorentz_params(dev: MrrDevice) -> tuple[float, float]:
    """
    Peak drop ``T0`` and coefficient of finesse ``F`` such that
    ``T_d(φ) = T0 / (1 + F sin²(φ/2))`` exactly.
    """
    r1, r2, a = _coeffs(dev)
    rra = r1 * r2 * a
    t0 = (1 - r1**2) * (1 - r2**2) * a / (1 - rra) ** 2
    return t0, 4 * rra / (1 - rra) ** 2


def drop_slope(dev: MrrDevice, phi):
    """Analytic derivative dT_d/dφ."""
    r1, r2, a = _coeffs(dev)
    rra = r1 * r2 * a
    phi = np.asarray(phi, dtype=float)
    den = 1 - 2 * rra * np.cos(phi) + rra**2
    out = -(1 - r1**2) * (1 - r2**2) * a * 2 * rra * np.sin(phi) / den**2
    return out if out.ndim else float(out)


def effective_index(geometry: RingGeometry, wavelength):
    """First-order dispersive effective index n_eff(λ)."""
    lam0 = geometry.resonance_wavelength
    n0 = geometry.eff_index_neff
    return n0 + (n0 - geometry.group_index_ng) * (np.asarray(wavelength) - lam0) / lam0


def round_trip_phase(dev: MrrDevice, wavelength):
    """
    Round-trip phase 2π n_eff(λ) L / λ + heater, unwrapped.

    At the resonance wavelength with zero heater phase the result is an exact
    multiple of 2π; ``dφ/dλ = −2π n_g L / λ²`` there.
    """
    g = dev.geometry
    lam = np.asarray(wavelength, dtype=float)
    out = TWO_PI * effective_index(g, lam) * g.length_L / lam + dev.heater_phase
    return out if out.ndim else float(out)


def detuning_phase(dev: MrrDevice, wavelength):
    """Round-trip phase relative to the nearest resonance, wrapped to (−π, π]."""
    phi = np.asarray(round_trip_phase(dev, wavelength)) - TWO_PI * dev.geometry.order
    out = np.pi - np.mod(np.pi - phi, TWO_PI)
    return out if out.ndim else float(out)


def quality_factor(dev: MrrDevice) -> float:
    """Loaded Q = π n_g L √(r1 r2 a) / (λ_res (1 − r1 r2 a))."""
    g = dev.geometry
    rra = dev.couplers.round_trip_product
    if rra >= 1:
        raise DegenerateResonator(f"r1*r2*a = {rra} >= 1 has no finite linewidth")
    return math.pi * g.group_index_ng * g.length_L * math.sqrt(rra) / (
        g.resonance_wavelength * (1 - rra)
    )


def photon_lifetime(dev: MrrDevice) -> float:
    """τ_p = λ_res Q / (2π c) [s]."""
    return dev.geometry.resonance_wavelength * quality_factor(dev) / (TWO_PI * C_VACUUM)


def free_spectral_range(dev: MrrDevice) -> float:
    """FSR = λ_res² / (n_g L) [m]."""
    g = dev.geometry
    return g.resonance_wavelength**2 / (g.group_index_ng * g.length_L)


def phase_per_wavelength(dev: MrrDevice) -> float:
    """|dφ/dλ| at resonance, 2π n_g L / λ² [rad/m]."""
    return TWO_PI / free_spectral_range(dev)


def _q_symmetric(geometry: RingGeometry, r: float, a: float) -> float:
    rra = r * r * a
    return math.pi * geometry.group_index_ng * geometry.length_L * math.sqrt(rra) / (
        geometry.resonance_wavelength * (1 - rra)
    )


def couplers_for_q(target_q: float, geometry: RingGeometry, a: float = 1.0,
                   xtol: float = 1e-14) -> CouplerSet:
    """
    Symmetric couplers (r1 = r2) whose loaded Q equals ``target_q``.

    Raises
    ------
    UnachievableQ
        If no r in (0, 1) reaches the target for the given loss ``a``.
    """
    if not target_q > 0:
        raise UnachievableQ(f"target Q must be positive, got {target_q}")
    lo, hi = 1e-9, 1.0 - 1e-15
    q_hi = _q_symmetric(geometry, hi, a)
    if target_q > q_hi or target_q < _q_symmetric(geometry, lo, a):
        raise UnachievableQ(f"Q = {target_q:g} outside reachable range (max {q_hi:.4g} for a = {a})")
    r = brentq(lambda r: _q_symmetric(geometry, r, a) - target_q, lo, hi, xtol=xtol, rtol=1e-15)
    return CouplerSet(r, r, a)


def device_for_q(target_q: float, geometry: RingGeometry | None = None, a: float = 1.0) -> MrrDevice:
    geometry = geometry or RingGeometry()
    return MrrDevice(geometry, couplers_for_q(target_q, geometry, a))
