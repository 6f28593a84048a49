"""
Feedback programming of weights onto heater phases, and the separable
scale correction that recovers the transpose from lossy backward readouts.

Weights live on a normalized scale: for a crossbar configuration the
readout ``raw`` (PD current over responsivity·input power, floor removed)
of every element can be driven anywhere in ``[zero, zero + span]``, and a
weight ``w`` corresponds to ``raw = zero + span·w``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .crossbar import (
    CrossbarConfig,
    PhaseMatrix,
    WdmFrame,
    backward_propagate,
    forward_propagate,
)
from .errors import DegenerateFit, DimensionMismatch, NoConvergence, UnreachableTarget
from .physics import drop_lorentz_params

WEIGHT_ONE_CURRENT = 9e-6
WEIGHT_ZERO_CURRENT = 5e-6


@dataclass(frozen=True)
class ReadoutScale:
    """Affine map between normalized weights and raw readouts: ``raw = zero + span·w``."""

    zero: float
    span: float

    def to_weight(self, raw):
        return (np.asarray(raw) - self.zero) / self.span

    def to_raw(self, w):
        return self.zero + self.span * np.asarray(w)


def readout_scale(config: CrossbarConfig) -> ReadoutScale:
    """Cached :func:`compute_readout_scale` for ``config``."""
    return config.memo("readout_scale", compute_readout_scale)


def compute_readout_scale(config: CrossbarConfig, samples: int = 4001) -> ReadoutScale:
    """
    Common range every element reaches within its multiplication window.

    Each ring is swept over ``[0, window]`` in its design direction (no
    crosstalk); ``zero`` is the largest per-element minimum and
    ``zero + span`` the smallest per-element maximum.
    """
    d = config.derived
    det = np.linspace(0.0, config.plan.window, samples)
    # the channel response of ring (i, j) depends on j only through its path gain
    phi = d.offsets[:, None, :] + d.directions[:, None, None] * det[None, :, None]
    resp = d.numerator / (1.0 - 2.0 * d.rra * np.cos(phi) + d.rra**2)
    if config.spectral_leakage:
        curve = resp.sum(axis=2)
    else:
        curve = np.take_along_axis(resp, np.arange(config.size_N)[:, None, None], axis=2)[..., 0]
    lo = d.gain_fwd * curve.min(axis=1)[:, None]
    hi = d.gain_fwd * curve.max(axis=1)[:, None]
    zero = float(lo.max())
    span = float(hi.min()) - zero
    return ReadoutScale(zero, span)


def pd_operating_point(config: CrossbarConfig, high: float = WEIGHT_ONE_CURRENT,
                         low: float = WEIGHT_ZERO_CURRENT) -> CrossbarConfig:
    """
    Responsivity and floor such that weight 1 reads ``high`` and weight 0 reads ``low``.

    The input power stays fixed; the floor absorbs the residual drop of a
    fully detuned ring.
    """
    sc = readout_scale(config)
    resp = (high - low) / (config.input_power_w * sc.span)
    floor = low - resp * config.input_power_w * sc.zero
    if floor < 0:
        raise UnreachableTarget("operating point needs a negative floor current")
    return config.replace(pd_responsivity=resp, pd_floor_current=floor)


@dataclass(frozen=True)
class FeedbackParams:
    """
    Feedback-loop settings.

    ``step_gain`` is the fraction of the inferred detuning error applied
    per round (dimensionless, 1 is a full Newton step on the isolated ring).
    ``boundary_margin`` [rad] keeps set phases away from the 0/2π wrap,
    where a heater's crosstalk onto its neighbours jumps by ``κ·2π``.
    """

    tolerance: float = 1e-3
    max_rounds: int = 200
    step_gain: float = 0.8
    boundary_margin: float = 0.05
    max_branch_switches: int = 3

    def __post_init__(self) -> None:
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")
        if not self.step_gain > 0:
            raise ValueError("step_gain must be positive")
        if self.boundary_margin < 0 or self.max_branch_switches < 0:
            raise ValueError("boundary_margin and max_branch_switches must be non-negative")


@dataclass(frozen=True)
class CalibrationReport:
    round_errors: tuple
    converged: bool

    @property
    def rounds_used(self) -> int:
        return len(self.round_errors)

    @property
    def final_error(self) -> float:
        return self.round_errors[-1]

    def to_dict(self) -> dict:
        return {
            "rounds_used": self.rounds_used,
            "converged": self.converged,
            "final_max_error": self.final_error,
            "round_max_error": list(self.round_errors),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def initial_phases(config: CrossbarConfig, target) -> np.ndarray:
    """Open-loop guess: invert the isolated, lossless ring for every element."""
    sc = readout_scale(config)
    t0, finesse = drop_lorentz_params(config.device_template)
    det = kernels.invert_drop(sc.to_raw(target), t0, finesse)
    return kernels.wrap_phase(config.derived.directions[:, None] * det)


def _check_target(config: CrossbarConfig, target) -> np.ndarray:
    t = np.asarray(target, dtype=float)
    n = config.size_N
    if t.shape != (n, n):
        raise DimensionMismatch(f"target shape {t.shape} != ({n}, {n})")
    if not np.all(np.isfinite(t)):
        raise UnreachableTarget("target contains non-finite entries")
    if t.min() < 0.0 or t.max() > 1.0:
        bad = np.unravel_index(np.argmax(np.abs(t - np.clip(t, 0, 1))), t.shape)
        raise UnreachableTarget(
            f"target[{bad[0]}, {bad[1]}] = {t[bad]:g} outside achievable range [0, 1]"
        )
    return t


_ZERO_NOISE: dict = {}


def _zero_noise(rounds: int, n: int) -> np.ndarray:
    z = _ZERO_NOISE.get((rounds, n))
    if z is None:
        z = _ZERO_NOISE[(rounds, n)] = np.zeros((rounds, n, n))
        z.setflags(write=False)
    return z


def program_weights(config: CrossbarConfig, target, params: FeedbackParams = FeedbackParams(),
                    initial: PhaseMatrix | None = None, rng=None):
    """
    Drive every ring's measured weight to ``target`` by closed-loop heater updates.

    Each round probes the crossbar with basis vectors (port ``j`` alone,
    all channels at unit power) and reads every PD, so element ``(i, j)``
    is attributed unambiguously. The measured readout is inverted through
    the isolated-ring Lorentzian to a detuning estimate, and the heater is
    stepped by ``step_gain`` times the detuning error, signed by the side
    of resonance the ring sits on. A ring driven close to the heater wrap
    switches to its mirror detuning on the other side of resonance.

    Returns
    -------
    (PhaseMatrix, CalibrationReport)

    Raises
    ------
    UnreachableTarget
        If any target entry is outside ``[0, 1]``.
    NoConvergence
        If ``max_rounds`` pass without reaching ``tolerance``; carries the
        report and the last phases.
    """
    t = _check_target(config, target)
    n = config.size_N
    sc = readout_scale(config)
    d = config.derived
    t0, finesse = config.memo("lorentz", lambda c: drop_lorentz_params(c.device_template))
    h0 = initial.phases if initial is not None else initial_phases(config, t)
    if initial is not None and initial.size != n:
        raise DimensionMismatch("initial phase matrix has the wrong size")
    sigma = config.additive_noise_sigma
    if sigma > 0:
        gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        noise = sigma * gen.standard_normal((params.max_rounds, n, n))
    else:
        noise = _zero_noise(params.max_rounds, n)
    floor_ratio = config.pd_floor_current / (config.pd_responsivity * config.input_power_w)
    h, errors, ok = kernels.program_loop(
        h0, t, d.offsets, d.gain_fwd, d.numerator, d.rra, config.spectral_leakage,
        config.thermal_coupling_kappa, d.directions, sc.zero, sc.span, t0, finesse,
        params.step_gain, params.tolerance, params.max_rounds, noise, floor_ratio,
        params.boundary_margin, params.max_branch_switches,
    )
    report = CalibrationReport(tuple(float(e) for e in errors), bool(ok))
    phases = PhaseMatrix(h)
    if not ok:
        raise NoConvergence(
            f"max weight error {report.final_error:.3e} after {report.rounds_used} rounds "
            f"(tolerance {params.tolerance:g})",
            report=report,
            phases=phases,
        )
    return phases, report


def _decode(config: CrossbarConfig, currents):
    return (np.asarray(currents) - config.pd_floor_current) / (
        config.pd_responsivity * config.input_power_w
    )


def measure_forward_matrix(config: CrossbarConfig, phases: PhaseMatrix, rng=None) -> np.ndarray:
    """Raw forward readout, entry ``(i, j)`` = PD ``i`` for a unit probe on port ``j``."""
    n = config.size_N
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    out = np.empty((n, n))
    for j in range(n):
        x = np.zeros(n)
        x[j] = 1.0
        frame = WdmFrame.from_vector(x, config.input_power_w)
        out[:, j] = _decode(config, forward_propagate(config, phases, frame, gen).currents)
    return out


def measure_backward_matrix(config: CrossbarConfig, phases: PhaseMatrix, rng=None) -> np.ndarray:
    """
    Raw backward readout, entry ``(j, i)`` = backward PD ``N+j`` for a unit
    probe on backward port ``N+i``. Lossless, this is the transpose of the
    forward readout.
    """
    n = config.size_N
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    out = np.empty((n, n))
    for i in range(n):
        x = np.zeros(n)
        x[i] = 1.0
        frame = WdmFrame.from_vector(x, config.input_power_w)
        out[:, i] = _decode(config, backward_propagate(config, phases, frame, gen).currents)
    return out


@dataclass(frozen=True)
class CorrectionParams:
    """Per-port (``A``) and per-PD (``B``) scale factors; ``A[0] = 1`` fixes the gauge."""

    input_scales_A: np.ndarray
    pd_scales_B: np.ndarray
    objective_history: tuple = field(default=(), compare=False)

    def __post_init__(self) -> None:
        a = np.asarray(self.input_scales_A, dtype=float)
        b = np.asarray(self.pd_scales_B, dtype=float)
        if a.shape != b.shape or a.ndim != 1:
            raise DimensionMismatch("A and B must be vectors of equal length")
        if np.any(a <= 0) or np.any(b <= 0):
            raise ValueError("correction scales must be positive")
        object.__setattr__(self, "input_scales_A", a)
        object.__setattr__(self, "pd_scales_B", b)

    @classmethod
    def ones(cls, n: int) -> "CorrectionParams":
        return cls(np.ones(n), np.ones(n))

    def to_dict(self) -> dict:
        return {
            "input_scales_A": self.input_scales_A.tolist(),
            "pd_scales_B": self.pd_scales_B.tolist(),
            "objective_history": list(self.objective_history),
        }


ALS_EPS = 1e-12


def _objective(R, T, a, b):
    return float(sum(np.sum((r - b[:, None] * t * a[None, :]) ** 2) for r, t in zip(R, T)))


def fit_backward_correction(measured: Sequence, targets: Sequence, max_sweeps: int = 500,
                            rtol: float = 1e-9) -> CorrectionParams:
    """
    Fit ``R_k ≈ diag(B) · T_k · diag(A)`` jointly over all pairs.

    ``targets`` are the readouts expected from a loss-free backward pass
    (the transposes of the programmed matrices). Alternates closed-form
    least-squares updates of ``A`` and ``B``, clamping at ``1e-12``.

    Raises
    ------
    DegenerateFit
        If some row or column is zero in every target, leaving its scale
        unidentifiable.
    """
    R = [np.asarray(r, dtype=float) for r in measured]
    T = [np.asarray(t, dtype=float) for t in targets]
    if not R or len(R) != len(T):
        raise DimensionMismatch("need at least one (measured, target) pair, lengths equal")
    shape = T[0].shape
    if len(shape) != 2 or shape[0] != shape[1]:
        raise DimensionMismatch(f"readouts must be square matrices, got {shape}")
    if any(r.shape != shape for r in R) or any(t.shape != shape for t in T):
        raise DimensionMismatch("all readouts and targets must share one shape")
    mass = sum(np.abs(t) for t in T)
    if np.any(mass.sum(axis=1) == 0) or np.any(mass.sum(axis=0) == 0):
        raise DegenerateFit("a row or column is zero in every target")
    n = shape[0]
    a = np.ones(n)
    b = np.ones(n)
    history = [_objective(R, T, a, b)]
    for _ in range(max_sweeps):
        num = sum((r * t * b[:, None]).sum(axis=0) for r, t in zip(R, T))
        den = sum(((t * b[:, None]) ** 2).sum(axis=0) for t in T)
        a = np.maximum(num / den, ALS_EPS)
        num = sum((r * t * a[None, :]).sum(axis=1) for r, t in zip(R, T))
        den = sum(((t * a[None, :]) ** 2).sum(axis=1) for t in T)
        b = np.maximum(num / den, ALS_EPS)
        g = a[0]
        a, b = a / g, b * g
        history.append(_objective(R, T, a, b))
        prev, cur = history[-2], history[-1]
        if cur == 0.0 or (prev - cur) <= rtol * prev:
            break
    return CorrectionParams(a, b, tuple(history))


def apply_correction(readout, params: CorrectionParams) -> np.ndarray:
    """``C(i, j) = R(i, j) / (B[i] · A[j])``."""
    r = np.asarray(readout, dtype=float)
    n = params.input_scales_A.size
    if r.shape[-2:] != (n, n):
        raise DimensionMismatch(f"readout shape {r.shape} does not match {n} correction scales")
    return r / (params.pd_scales_B[:, None] * params.input_scales_A[None, :])
