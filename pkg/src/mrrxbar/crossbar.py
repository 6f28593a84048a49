"""
N×N microring crossbar: channel planning, path loss, thermal crosstalk,
photodetector readout and forward/backward propagation.

Indexing convention: element ``(i, j)`` of every N×N array is the ring that
couples input port ``j`` onto photodetector ``i``, so a programmed weight
array multiplies a column vector directly (``I = W @ x``). The ring at
``(i, j)`` works on WDM channel ``i``.

Layout used for path lengths: input port ``j`` enters row waveguide ``j``
from the left; PD ``i`` terminates column waveguide ``i`` at the bottom.
Backward port ``N+i`` feeds column ``i`` from the top and backward PD ``N+j``
terminates row ``j`` on the right.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field, fields, replace
from functools import lru_cache
from typing import Literal, Optional

import numpy as np

from . import kernels
from .errors import ConfigError, DimensionMismatch, InsufficientQ
from .physics import (
    TWO_PI,
    CouplerSet,
    MrrDevice,
    RingGeometry,
    detuning_phase,
    device_for_q,
    drop_transmission,
    free_spectral_range,
    phase_per_wavelength,
)

DEFAULT_Q = 9000.0


@lru_cache(maxsize=None)
def default_device() -> MrrDevice:
    """Default-geometry ring (n_g 4.2, L 62.8 µm, 1.55 µm) with Q ≈ 9000."""
    return device_for_q(DEFAULT_Q, RingGeometry(), a=1.0)


@dataclass(frozen=True)
class ChannelPlan:
    """
    WDM channel layout within one FSR of the template ring.

    ``positions`` are channel locations in round-trip-phase units relative
    to the first channel; ``directions`` give the side (+1 red, −1 blue)
    toward which each ring detunes to lower its weight.
    """

    wavelengths: tuple
    delta_phi: float
    bit_precision_b: int
    positions: tuple
    directions: tuple

    def __post_init__(self) -> None:
        lam = np.asarray(self.wavelengths)
        if lam.size < 1:
            raise ValueError("a channel plan needs at least one channel")
        if np.any(np.diff(lam) <= 0):
            raise ValueError("channel wavelengths must be strictly increasing")

    @property
    def size(self) -> int:
        return len(self.wavelengths)

    @property
    def window(self) -> float:
        """Largest detuning a ring uses inside its multiplication region."""
        return min(self.delta_phi / 2.0, math.pi)

    def gaps(self) -> np.ndarray:
        return np.diff(np.asarray(self.positions))


def _gap_positions(n: int, delta_phi: float) -> np.ndarray:
    pos = [0.0]
    for k in range(n - 1):
        pos.append(pos[-1] + (delta_phi if k % 2 == 0 else delta_phi / 2.0))
    return np.asarray(pos)


def plan_channels(n: int, device: MrrDevice, b: int = 8) -> ChannelPlan:
    """
    Lay out ``n`` WDM channels with alternating full/half spacing.

    The full spacing is the drop-peak width ``Δφ = 8π / (3n)``; every other
    gap is halved because neighbouring rings detune in opposite directions.

    Raises
    ------
    InsufficientQ
        If ``T_d(Δφ/2) / T_d(0)`` does not stay below ``2**-b``.
    """
    if n < 1 or b < 1:
        raise ValueError(f"need n >= 1 and b >= 1, got n={n}, b={b}")
    delta_phi = 8.0 * math.pi / (3.0 * n)
    leak = drop_transmission(device, delta_phi / 2.0) / drop_transmission(device, 0.0)
    if not leak < 2.0**-b:
        raise InsufficientQ(
            f"adjacent-channel leakage {leak:.3e} >= 2^-{b} = {2.0**-b:.3e} for N={n}; "
            "ring Q too low"
        )
    pos = _gap_positions(n, delta_phi)
    centre = 0.5 * (pos[0] + pos[-1])
    lam0 = device.geometry.resonance_wavelength
    k = phase_per_wavelength(device)
    wavelengths = tuple(float(lam0 + (p - centre) / k) for p in pos)
    directions = tuple(1 if c % 2 == 0 else -1 for c in range(n))
    return ChannelPlan(wavelengths, delta_phi, b, tuple(float(p) for p in pos), directions)


SummationMode = Literal["incoherent", "coherent"]


@dataclass(frozen=True)
class CrossbarConfig:
    """Static description of a crossbar; all loss figures are defaults, not measurements."""

    size_N: int = 4
    device_template: MrrDevice = field(default_factory=default_device)
    bit_precision_b: int = 8
    crossing_loss_db: float = 0.1
    waveguide_loss_db_per_cm: float = 2.0
    pitch: float = 100e-6
    thermal_coupling_kappa: float = 0.01
    pd_responsivity: float = 1.0
    pd_floor_current: float = 0.0
    additive_noise_sigma: float = 0.0
    summation_mode: SummationMode = "incoherent"
    spectral_leakage: bool = True
    input_power_w: float = 1e-5
    plan: Optional[ChannelPlan] = None
    # per-instance memo for derived arrays; not part of the value
    _memo: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.size_N < 1:
            raise ConfigError(f"size_N must be >= 1, got {self.size_N}")
        if self.crossing_loss_db < 0 or self.waveguide_loss_db_per_cm < 0:
            raise ConfigError("losses must be non-negative")
        if self.pitch < 0:
            raise ConfigError("pitch must be non-negative")
        if not self.pd_responsivity > 0:
            raise ConfigError("pd_responsivity must be positive")
        if self.pd_floor_current < 0:
            raise ConfigError("pd_floor_current must be non-negative")
        if not 0 <= self.thermal_coupling_kappa < 1:
            raise ConfigError("thermal_coupling_kappa must be in [0, 1)")
        if self.additive_noise_sigma < 0:
            raise ConfigError("additive_noise_sigma must be non-negative")
        if self.summation_mode not in ("incoherent", "coherent"):
            raise ConfigError(f"unknown summation_mode {self.summation_mode!r}")
        if not self.input_power_w > 0:
            raise ConfigError("input_power_w must be positive")
        if self.plan is None:
            object.__setattr__(
                self, "plan", plan_channels(self.size_N, self.device_template, self.bit_precision_b)
            )
        elif self.plan.size != self.size_N:
            raise ConfigError(f"plan has {self.plan.size} channels, crossbar has {self.size_N}")

    @classmethod
    def ideal(cls, size_N: int = 4, device: MrrDevice | None = None, **overrides) -> "CrossbarConfig":
        """Lossless, crosstalk-free, leakage-free crossbar with unit responsivity."""
        kw = dict(
            size_N=size_N,
            crossing_loss_db=0.0,
            waveguide_loss_db_per_cm=0.0,
            thermal_coupling_kappa=0.0,
            pd_responsivity=1.0,
            pd_floor_current=0.0,
            additive_noise_sigma=0.0,
            spectral_leakage=False,
            input_power_w=1.0,
        )
        if device is not None:
            kw["device_template"] = device
        kw.update(overrides)
        return cls(**kw)

    def replace(self, **changes) -> "CrossbarConfig":
        if "size_N" in changes or "device_template" in changes or "bit_precision_b" in changes:
            changes.setdefault("plan", None)
        return replace(self, **changes)

    # derived quantities, cached per instance via _Derived
    @property
    def derived(self) -> "_Derived":
        d = self._memo.get("derived")
        if d is None:
            d = self._memo["derived"] = _derived(self)
        return d

    def memo(self, key, build):
        """Cache ``build(self)`` on this instance under ``key``."""
        v = self._memo.get(key)
        if v is None:
            v = self._memo[key] = build(self)
        return v

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)
             if f.name not in ("device_template", "plan", "_memo")}
        dev = self.device_template
        d["device"] = {
            "length_L": dev.geometry.length_L,
            "group_index_ng": dev.geometry.group_index_ng,
            "eff_index_neff": dev.geometry.eff_index_neff,
            "resonance_wavelength": dev.geometry.resonance_wavelength,
            "r1": dev.couplers.r1,
            "r2": dev.couplers.r2,
            "a": dev.couplers.a,
        }
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "CrossbarConfig":
        data = dict(data)
        allowed = {f.name for f in fields(cls)} - {"device_template", "plan", "_memo"}
        kw = {}
        dev_spec = data.pop("device", None)
        for key, value in data.items():
            if key not in allowed:
                raise ConfigError(f"unknown crossbar key {key!r}")
            kw[key] = value
        if dev_spec is not None:
            kw["device_template"] = device_from_dict(dev_spec)
        return cls(**kw)


DEVICE_KEYS = ("length_L", "group_index_ng", "eff_index_neff", "resonance_wavelength",
               "r1", "r2", "a", "q")


def device_from_dict(spec: dict) -> MrrDevice:
    """Build a ring from ``r1``/``r2``/``a`` or from a target ``q`` (symmetric couplers)."""
    unknown = set(spec) - set(DEVICE_KEYS)
    if unknown:
        raise ConfigError(f"unknown device key {sorted(unknown)[0]!r}")
    geom_kw = {k: spec[k] for k in DEVICE_KEYS[:4] if k in spec}
    geometry = RingGeometry(**geom_kw)
    a = float(spec.get("a", 1.0))
    if "q" in spec:
        if "r1" in spec or "r2" in spec:
            raise ConfigError("give either 'q' or 'r1'/'r2', not both")
        return device_for_q(float(spec["q"]), geometry, a)
    if "r1" in spec or "r2" in spec:
        r1 = float(spec.get("r1", spec.get("r2")))
        r2 = float(spec.get("r2", r1))
        return MrrDevice(geometry, CouplerSet(r1, r2, a))
    return device_for_q(DEFAULT_Q, geometry, a)


@dataclass(frozen=True)
class _Derived:
    offsets: np.ndarray        # (channel of ring, channel k) → detuning phase
    gain_fwd: np.ndarray
    gain_bwd: np.ndarray
    directions: np.ndarray
    numerator: float
    rra: float


def _derived(config: CrossbarConfig) -> _Derived:
    n = config.size_N
    plan = config.plan
    dev = config.device_template
    offsets = np.empty((n, n))
    for c in range(n):
        ring = dev.at_wavelength(plan.wavelengths[c]).with_heater(0.0)
        offsets[c] = detuning_phase(ring, np.asarray(plan.wavelengths))
    c = dev.couplers
    d = _Derived(
        offsets=offsets,
        gain_fwd=path_gain_forward(config),
        gain_bwd=path_gain_backward(config),
        directions=np.asarray(plan.directions, dtype=float),
        numerator=(1 - c.r1**2) * (1 - c.r2**2) * c.a,
        rra=c.r1 * c.r2 * c.a,
    )
    return d


def _db_to_gain(db):
    return 10.0 ** (-np.asarray(db) / 10.0)


def route_counts_forward(n: int):
    """Crossings and length (in pitches) for every forward route, indexed (pd, port)."""
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    return i + (n - 1 - j), (i + 1) + (n - j)


def route_counts_backward(n: int):
    """Crossings and length (in pitches) for every backward route, indexed (pd, port)."""
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    return j + (n - 1 - i), (j + 1) + (n - i)


def _route_gain(config: CrossbarConfig, crossings, pitches):
    length_cm = pitches * config.pitch * 100.0
    return _db_to_gain(crossings * config.crossing_loss_db + length_cm * config.waveguide_loss_db_per_cm)


def path_gain_forward(config: CrossbarConfig) -> np.ndarray:
    return _route_gain(config, *route_counts_forward(config.size_N))


def path_gain_backward(config: CrossbarConfig) -> np.ndarray:
    return _route_gain(config, *route_counts_backward(config.size_N))


@dataclass(frozen=True)
class PhaseMatrix:
    phases: np.ndarray

    def __post_init__(self) -> None:
        p = np.array(self.phases, dtype=float)
        if p.ndim != 2 or p.shape[0] != p.shape[1]:
            raise DimensionMismatch(f"phase matrix must be square, got shape {p.shape}")
        p = kernels.wrap_phase(p)
        p.setflags(write=False)
        object.__setattr__(self, "phases", p)

    @classmethod
    def zeros(cls, n: int) -> "PhaseMatrix":
        return cls(np.zeros((n, n)))

    @property
    def size(self) -> int:
        return self.phases.shape[0]


@dataclass(frozen=True)
class WdmFrame:
    """Optical power per (port, channel) [W]; ``phases`` only matter in coherent mode."""

    powers: np.ndarray
    phases: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        p = np.asarray(self.powers, dtype=float)
        if p.ndim != 2:
            raise DimensionMismatch(f"frame must be (port, channel), got shape {p.shape}")
        if np.any(p < 0):
            raise ValueError("optical powers must be non-negative")
        object.__setattr__(self, "powers", p)
        if self.phases is not None:
            ph = np.asarray(self.phases, dtype=float)
            if ph.shape != p.shape:
                raise DimensionMismatch("phase array must match the power array")
            object.__setattr__(self, "phases", ph)

    @classmethod
    def from_vector(cls, x, power: float = 1.0) -> "WdmFrame":
        """Port ``j`` carries ``x[j] * power`` on every channel."""
        x = np.asarray(x, dtype=float)
        return cls(np.repeat(x[:, None] * power, x.size, axis=1))


@dataclass(frozen=True)
class PdReadout:
    currents: np.ndarray


def _check(config: CrossbarConfig, phases: PhaseMatrix, frame: WdmFrame | None = None):
    n = config.size_N
    if phases.size != n:
        raise DimensionMismatch(f"phase matrix is {phases.size}x{phases.size}, crossbar is {n}x{n}")
    if frame is not None and frame.powers.shape != (n, n):
        raise DimensionMismatch(f"frame shape {frame.powers.shape} != ({n}, {n})")


def _rng(rng):
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng if rng is not None else 0)


def effective_phases(config: CrossbarConfig, set_phases: PhaseMatrix) -> PhaseMatrix:
    """Set phases plus κ times the sum of the four nearest neighbours, re-wrapped."""
    _check(config, set_phases)
    return PhaseMatrix(kernels.effective_phases(set_phases.phases, config.thermal_coupling_kappa))


def weight_of(config: CrossbarConfig, eff: PhaseMatrix, i: int, j: int) -> float:
    """On-channel drop of the ring coupling port ``j`` onto PD ``i`` (no path loss)."""
    d = config.derived
    return float(drop_transmission(config.device_template, d.offsets[i, i] + eff.phases[i, j]))


def leak_tensor(config: CrossbarConfig, phases: PhaseMatrix, direction: str = "forward") -> np.ndarray:
    """Path-weighted drop of every ring at every channel, shape (pd, port, channel)."""
    _check(config, phases)
    d = config.derived
    gain = d.gain_fwd if direction == "forward" else d.gain_bwd
    he = kernels.effective_phases(phases.phases, config.thermal_coupling_kappa)
    return kernels.leak_tensor(d.offsets, he, gain, d.numerator, d.rra, config.spectral_leakage)


def transfer_matrix(config: CrossbarConfig, phases: PhaseMatrix, direction: str = "forward") -> np.ndarray:
    """
    Optical power transfer for inputs that carry equal power on all channels.

    Forward: ``(pd, port)``. Backward: ``(pd, port)`` of the forward
    labelling, i.e. the backward readout is its transpose.
    """
    _check(config, phases)
    d = config.derived
    gain = d.gain_fwd if direction == "forward" else d.gain_bwd
    he = kernels.effective_phases(phases.phases, config.thermal_coupling_kappa)
    return kernels.leak_sum(d.offsets, he, gain, d.numerator, d.rra, config.spectral_leakage)


def _detect(config, leak, powers, frame_phases, rng, transpose):
    # leak: (pd, port, k); transpose swaps the roles so that sources index axis 0.
    if transpose:
        leak = leak.transpose(1, 0, 2)  # (dest, source, k)
    if config.summation_mode == "incoherent":
        optical = np.einsum("dsk,sk->d", leak, powers)
    else:
        if frame_phases is None:
            theta = rng.uniform(0.0, TWO_PI, size=powers.shape[0])[:, None] * np.ones_like(powers)
        else:
            theta = frame_phases
        field_ = np.sqrt(leak * powers[None, :, :]) * np.exp(1j * theta)[None, :, :]
        optical = np.sum(np.abs(field_.sum(axis=1)) ** 2, axis=1)
    current = config.pd_responsivity * optical + config.pd_floor_current
    if config.additive_noise_sigma > 0:
        current = current * (1.0 + config.additive_noise_sigma * rng.standard_normal(current.shape))
    return current


def forward_propagate(config: CrossbarConfig, phases: PhaseMatrix, frame: WdmFrame,
                      rng=None) -> PdReadout:
    """PD currents for a forward (ports 1..N) injection."""
    _check(config, phases, frame)
    rng = _rng(rng)
    leak = leak_tensor(config, phases, "forward")
    return PdReadout(_detect(config, leak, frame.powers, frame.phases, rng, transpose=False))


def backward_propagate(config: CrossbarConfig, phases: PhaseMatrix, frame: WdmFrame,
                       rng=None) -> PdReadout:
    """
    PD currents at PDs N+1..2N for an injection at ports N+1..2N.

    ``frame`` row ``i`` is backward port ``N+i`` (column ``i``); readout
    entry ``j`` is backward PD ``N+j`` (row ``j``).
    """
    _check(config, phases, frame)
    rng = _rng(rng)
    leak = leak_tensor(config, phases, "backward")
    return PdReadout(_detect(config, leak, frame.powers, frame.phases, rng, transpose=True))


def spectrum_scan(config: CrossbarConfig, phases: PhaseMatrix, input_port: int,
                  wavelength_range: tuple[float, float] | None = None, steps: int = 2001):
    """
    Sweep a unit-power single-wavelength input on ``input_port``.

    Returns ``(wavelengths, currents)`` with ``currents`` shaped (N, steps).
    The default range covers the channel plan with a margin of one full
    channel spacing on each side.
    """
    _check(config, phases)
    if steps < 2:
        raise ValueError("steps must be >= 2")
    n = config.size_N
    plan = config.plan
    dev = config.device_template
    if wavelength_range is None:
        margin = plan.delta_phi / phase_per_wavelength(dev)
        wavelength_range = (plan.wavelengths[0] - margin, plan.wavelengths[-1] + margin)
    lam = np.linspace(wavelength_range[0], wavelength_range[1], steps)
    he = kernels.effective_phases(phases.phases, config.thermal_coupling_kappa)
    gain = config.derived.gain_fwd
    out = np.empty((n, steps))
    for i in range(n):
        ring = dev.at_wavelength(plan.wavelengths[i]).with_heater(0.0)
        phi = detuning_phase(ring, lam) + he[i, input_port]
        out[i] = config.pd_responsivity * gain[i, input_port] * drop_transmission(dev, phi)
    out += config.pd_floor_current
    return lam, out


def spectrum_csv(wavelengths, currents) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["wavelength_nm"] + [f"pd{i + 1}" for i in range(currents.shape[0])])
    for k, lam in enumerate(wavelengths):
        w.writerow([f"{lam * 1e9:.6f}"] + [f"{v:.9e}" for v in currents[:, k]])
    return buf.getvalue()
