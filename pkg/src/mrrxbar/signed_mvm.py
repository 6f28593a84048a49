"""
Signed matrix-vector products on a nonnegative crossbar.

A weight matrix ``W`` in ``[-1, 1]`` is split as ``W = 2 (W' - W_off)`` with
``W' = W/2 + 1/2`` and ``W_off`` the all-½ matrix. ``W_off x`` is the same
for every output, so one 1×n offset row suffices. Signed inputs are split
the same way, giving four nonnegative passes.

Backends implement ``mvm(matrix, x, *, transpose=False, slot=...)`` for a
nonnegative ``matrix`` and nonnegative ``x`` and count their calls.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .calibration import (
    CorrectionParams,
    FeedbackParams,
    fit_backward_correction,
    measure_backward_matrix,
    measure_forward_matrix,
    program_weights,
    readout_scale,
)
from .crossbar import (
    CrossbarConfig,
    PhaseMatrix,
    WdmFrame,
    backward_propagate,
    forward_propagate,
    transfer_matrix,
)
from .errors import ConfigError, DimensionMismatch, NegativeInput, NoConvergence, OutOfRange
from .physics import drop_slope


@dataclass(frozen=True)
class SignedWeights:
    weights_W: np.ndarray
    split_Wprime: np.ndarray = field(init=False)
    offset_row: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        w = np.array(self.weights_W, dtype=float)
        if w.ndim != 2:
            raise DimensionMismatch(f"weights must be a matrix, got shape {w.shape}")
        if np.any(np.abs(w) > 1.0) or not np.all(np.isfinite(w)):
            raise OutOfRange(f"weights must lie in [-1, 1], max |w| = {np.max(np.abs(w)):g}")
        w.setflags(write=False)
        wp = 0.5 * w + 0.5
        wp.setflags(write=False)
        off = np.full((1, w.shape[1]), 0.5)
        off.setflags(write=False)
        object.__setattr__(self, "weights_W", w)
        object.__setattr__(self, "split_Wprime", wp)
        object.__setattr__(self, "offset_row", off)

    @property
    def offset_col(self) -> np.ndarray:
        """Offset used by the transpose pass: an m×1 column of ½."""
        return _half_column(self.shape[0])

    @property
    def shape(self):
        return self.weights_W.shape

    def reconstruct(self) -> np.ndarray:
        return 2.0 * (self.split_Wprime - self.offset_row)

    @property
    def device_count(self) -> int:
        """Rings used: m·n for ``W'`` plus n for the offset row."""
        m, n = self.shape
        return m * n + n


_HALF_COLUMNS: dict = {}


def _half_column(m: int) -> np.ndarray:
    c = _HALF_COLUMNS.get(m)
    if c is None:
        c = _HALF_COLUMNS[m] = np.full((m, 1), 0.5)
        c.setflags(write=False)
    return c


def split_weights(W) -> SignedWeights:
    """Offset split of ``W``; raises ``OutOfRange`` if any ``|w| > 1``."""
    return SignedWeights(np.asarray(W, dtype=float))


class IdealBackend:
    """Exact dense arithmetic with the crossbar call interface."""

    name = "ideal"

    def __init__(self) -> None:
        self.mvm_calls = 0

    def mvm(self, matrix, x, *, transpose: bool = False, slot: str = "default") -> np.ndarray:
        x = np.asarray(x, dtype=float)
        self.mvm_calls += 1 if x.ndim == 1 else x.shape[1]
        m = np.asarray(matrix, dtype=float)
        return (m.T if transpose else m) @ x

    def reset_counters(self) -> None:
        self.mvm_calls = 0


@dataclass
class _Slot:
    target: np.ndarray
    phases: PhaseMatrix
    fwd_map: np.ndarray | None = None
    bwd_map: np.ndarray | None = None
    source: np.ndarray | None = None
    shape: tuple = ()


class CrossbarBackend:
    """
    Simulated N×N crossbar with feedback programming and transpose correction.

    Each ``slot`` names one physical array. A slot is reprogrammed (warm
    started from its previous phases) whenever its target changes. The
    backward scales ``A``, ``B`` are fitted once at construction from an
    all-½ probe program.

    Parameters
    ----------
    config : CrossbarConfig
    feedback : FeedbackParams
    seed : int
        Seeds noise in propagation and programming.
    """

    name = "crossbar"

    def __init__(self, config: CrossbarConfig, feedback: FeedbackParams = FeedbackParams(),
                 seed: int = 0) -> None:
        self.config = config
        self.feedback = feedback
        self.rng = np.random.default_rng(seed)
        self.scale = readout_scale(config)
        self.slots: dict[str, _Slot] = {}
        self.mvm_calls = 0
        self.program_calls = 0
        self.program_rounds = 0
        self.unconverged_programs = 0
        self._cache_maps = config.additive_noise_sigma == 0 and config.summation_mode == "incoherent"
        self.correction = self._fit_correction()

    @property
    def size(self) -> int:
        return self.config.size_N

    def reset_counters(self) -> None:
        self.mvm_calls = 0

    def _fit_correction(self) -> CorrectionParams:
        n = self.size
        slot = self._program("__probe__", np.full((n, n), 0.5))
        fwd = measure_forward_matrix(self.config, slot.phases, self.rng)
        bwd = measure_backward_matrix(self.config, slot.phases, self.rng)
        del self.slots["__probe__"]
        return fit_backward_correction([bwd], [fwd.T])

    def _embed(self, matrix) -> np.ndarray:
        m = np.asarray(matrix, dtype=float)
        n = self.size
        if m.ndim != 2 or m.shape[0] > n or m.shape[1] > n:
            raise DimensionMismatch(f"matrix of shape {m.shape} does not fit a {n}x{n} crossbar")
        out = np.zeros((n, n))
        out[: m.shape[0], : m.shape[1]] = m
        return out

    def _program(self, slot: str, target: np.ndarray) -> _Slot:
        cur = self.slots.get(slot)
        if cur is not None and np.array_equal(cur.target, target):
            return cur
        self.program_calls += 1
        initial = cur.phases if cur is not None else None
        try:
            phases, report = program_weights(self.config, target, self.feedback, initial, self.rng)
            self.program_rounds += report.rounds_used
        except NoConvergence as exc:
            phases = exc.phases
            self.program_rounds += exc.report.rounds_used
            self.unconverged_programs += 1
        new = _Slot(target.copy(), phases)
        if cur is not None and np.array_equal(cur.phases.phases, phases.phases):
            # converged without moving a heater; the optical maps still hold
            new.fwd_map, new.bwd_map = cur.fwd_map, cur.bwd_map
        self.slots[slot] = new
        return new

    def program(self, slot: str, matrix) -> PhaseMatrix:
        return self._slot_for(slot, matrix).phases

    def realized_weights(self, slot: str, shape=None) -> np.ndarray:
        """Normalized weights the slot's phases actually produce (noise-free probe)."""
        s = self.slots[slot]
        raw = transfer_matrix(self.config, s.phases, "forward")
        w = self.scale.to_weight(raw)
        return w if shape is None else w[: shape[0], : shape[1]]

    def _decode(self, currents) -> np.ndarray:
        c = self.config
        return (np.asarray(currents) - c.pd_floor_current) / (c.pd_responsivity * c.input_power_w)

    def mvm(self, matrix, x, *, transpose: bool = False, slot: str = "default") -> np.ndarray:
        """
        Normalized product ``matrix @ x`` (or ``matrix.T @ x``) read from the array.

        ``x`` may be a vector or a 2-D array whose columns are separate
        inputs; each column counts as one MVM.
        """
        x = np.asarray(x, dtype=float)
        if x.size and x.min() < 0:
            raise NegativeInput("crossbar inputs are optical powers and must be non-negative")
        s = self._slot_for(slot, matrix)
        rows, cols = s.shape
        if x.shape[0] != (rows if transpose else cols) or x.ndim > 2:
            raise DimensionMismatch(f"input of shape {x.shape} does not match matrix {s.shape}")
        self.mvm_calls += 1 if x.ndim == 1 else x.shape[1]
        n = self.size
        xin = np.zeros((n,) + x.shape[1:])
        xin[: x.shape[0]] = x
        cfg = self.config
        if not transpose:
            if self._cache_maps:
                if s.fwd_map is None:
                    s.fwd_map = transfer_matrix(cfg, s.phases, "forward")
                raw = s.fwd_map @ xin
            else:
                raw = self._propagate(forward_propagate, s.phases, xin)
            return ((raw - self.scale.zero * xin.sum(axis=0)) / self.scale.span)[:rows]
        a = self.correction.input_scales_A
        b = self.correction.pd_scales_B
        pre = xin / (a if xin.ndim == 1 else a[:, None])
        if self._cache_maps:
            if s.bwd_map is None:
                s.bwd_map = transfer_matrix(cfg, s.phases, "backward")
            raw = s.bwd_map.T @ pre
        else:
            raw = self._propagate(backward_propagate, s.phases, pre)
        raw = raw / (b if raw.ndim == 1 else b[:, None])
        return ((raw - self.scale.zero * xin.sum(axis=0)) / self.scale.span)[:cols]

    def _propagate(self, fn, phases, xin):
        cfg = self.config
        cols = xin[:, None] if xin.ndim == 1 else xin
        out = np.empty_like(cols)
        for k in range(cols.shape[1]):
            frame = WdmFrame.from_vector(cols[:, k], cfg.input_power_w)
            out[:, k] = self._decode(fn(cfg, phases, frame, self.rng).currents)
        return out[:, 0] if xin.ndim == 1 else out

    def _slot_for(self, slot: str, matrix) -> _Slot:
        cur = self.slots.get(slot)
        if cur is not None and cur.source is not None and (
                cur.source is matrix or np.array_equal(cur.source, matrix)):
            return cur
        m = np.asarray(matrix, dtype=float)
        s = self._program(slot, self._embed(m))
        s.source = m
        s.shape = m.shape
        return s

    def phase_step(self, slot: str, grad_wprime, lr: float) -> np.ndarray:
        """
        Move heaters along ``-lr · dL/dw' · dw'/dφ`` and return the realized weights.

        ``dw'/dφ`` is the analytic slope of the drop response at each ring's
        effective phase, scaled by its path gain and the readout span.
        """
        g = np.asarray(grad_wprime, dtype=float)
        s = self.slots[slot]
        cfg = self.config
        d = cfg.derived
        he = kernels.effective_phases(s.phases.phases, cfg.thermal_coupling_kappa)
        diag = np.diag(d.offsets)[:, None]
        slope = drop_slope(cfg.device_template, diag + he) * d.gain_fwd / self.scale.span
        full = self._embed(g)
        h = s.phases.phases - lr * full * slope
        new_phases = PhaseMatrix(h)
        realized = self.scale.to_weight(transfer_matrix(cfg, new_phases, "forward"))
        mask = np.zeros_like(full, dtype=bool)
        mask[: g.shape[0], : g.shape[1]] = True
        target = np.where(mask, np.clip(realized, 0.0, 1.0), 0.0)
        self.slots[slot] = _Slot(target, new_phases)
        return realized[: g.shape[0], : g.shape[1]]


def _offset_pass(sw: SignedWeights, x, backend, transpose: bool, slot: str):
    """``½ Σ x`` computed on a ring array: a 1×n row forward, an m×1 column backward."""
    if transpose:
        return backend.mvm(sw.offset_col, x, transpose=True, slot=slot + "/offset_t")[0]
    return backend.mvm(sw.offset_row, x, slot=slot + "/offset")[0]


def mvm_signed_weights(sw: SignedWeights, x, backend, *, transpose: bool = False,
                       slot: str = "default") -> np.ndarray:
    """
    ``W x`` (or ``Wᵀ x``) for nonnegative ``x`` in two passes.

    ``x`` may hold several inputs as columns.

    Raises
    ------
    NegativeInput
        If any ``x < 0``; use :func:`mvm_signed_full`.
    """
    x = np.asarray(x, dtype=float)
    if x.size and x.min() < 0:
        raise NegativeInput("mvm_signed_weights needs x >= 0; use mvm_signed_full")
    _check_len(sw, x, transpose)
    main = backend.mvm(sw.split_Wprime, x, transpose=transpose, slot=slot)
    off = _offset_pass(sw, x, backend, transpose, slot)
    return 2.0 * (main - off)


def mvm_signed_full(sw: SignedWeights, x, backend, *, transpose: bool = False,
                    slot: str = "default") -> np.ndarray:
    """
    ``W x`` (or ``Wᵀ x``) for ``x`` in ``[-1, 1]`` in four passes:
    ``4 (W'x' − W'x_off − W_off x' + W_off x_off)`` with ``x' = x/2 + 1/2``.
    """
    x = np.asarray(x, dtype=float)
    if x.size and np.max(np.abs(x)) > 1.0:
        raise OutOfRange(f"inputs must lie in [-1, 1], max |x| = {np.max(np.abs(x)):g}")
    _check_len(sw, x, transpose)
    xp = 0.5 * x + 0.5
    xo = np.full_like(x, 0.5)
    a = backend.mvm(sw.split_Wprime, xp, transpose=transpose, slot=slot)
    b = backend.mvm(sw.split_Wprime, xo, transpose=transpose, slot=slot)
    c = _offset_pass(sw, xp, backend, transpose, slot)
    d = _offset_pass(sw, xo, backend, transpose, slot)
    return 4.0 * (a - b - c + d)


def _check_len(sw: SignedWeights, x, transpose: bool) -> None:
    m, n = sw.shape
    want = m if transpose else n
    if x.ndim not in (1, 2) or x.shape[0] != want:
        raise DimensionMismatch(f"input of shape {x.shape} needs {want} rows for weights {sw.shape}")


def make_backend(kind: str, config: CrossbarConfig | None = None,
                 feedback: FeedbackParams = FeedbackParams(), seed: int = 0):
    if kind == "ideal":
        return IdealBackend()
    if kind == "crossbar":
        return CrossbarBackend(config if config is not None else CrossbarConfig(), feedback, seed)
    raise ConfigError(f"unknown backend {kind!r}")
