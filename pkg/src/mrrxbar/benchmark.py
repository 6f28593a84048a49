"""
Design-rule and performance calculators for an N×N ring crossbar.

``required_q`` chains the channel-spacing rule ``Δφ = 8π/(3N)`` with the
b-bit overlap bound ``T_d(Δφ/2)/T_d(0) = 2^-b`` and the ring's Q. The
remaining functions are closed-form throughput, power and training-time
models.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Iterable, Literal

import numpy as np
from scipy.optimize import brentq

from .crossbar import plan_channels
from .errors import InsufficientQ, NoSolution
from .physics import CouplerSet, MrrDevice, RingGeometry, quality_factor

ShifterKind = Literal["thermo_optic", "hybrid_mos"]
SHIFTER_KINDS = ("thermo_optic", "hybrid_mos")


@dataclass(frozen=True)
class PowerParams:
    """Signal energy per port and clock [J], static power per π phase shifter [W]."""

    e_signal: float = 6.6e-12
    e_ps_to: float = 20e-3
    e_ps_mos: float = 10e-12

    def __post_init__(self) -> None:
        if not (self.e_signal > 0 and self.e_ps_to > 0 and self.e_ps_mos > 0):
            raise ValueError("all energies must be positive")

    def shifter(self, kind: ShifterKind) -> float:
        if kind == "thermo_optic":
            return self.e_ps_to
        if kind == "hybrid_mos":
            return self.e_ps_mos
        raise ValueError(f"unknown shifter kind {kind!r}")


@dataclass(frozen=True)
class BenchPoint:
    size_N: int
    bit_precision_b: int
    clock_f: float
    required_Q: float
    tops: float
    power_W: float
    efficiency: float
    shifter_kind: str


def channel_phase(n: int) -> float:
    """Phase allocated to each channel, ``8π/(3N)``."""
    return 8.0 * math.pi / (3.0 * n)


def _overlap_ratio(rra: float, phi: float) -> float:
    # T_d(φ)/T_d(0) for round-trip product rra, independent of how it splits into r1, r2, a
    return (1.0 - rra) ** 2 / (1.0 - 2.0 * rra * math.cos(phi) + rra * rra)


def required_device(n: int, b: int = 8, geometry: RingGeometry | None = None,
                    a: float = 1.0) -> MrrDevice:
    """
    Symmetric-coupler ring whose overlap at half the channel spacing just meets ``2^-b``.

    The root is nudged toward higher Q until the strict bound holds, so the
    device always passes :func:`mrrxbar.crossbar.plan_channels`.

    Raises
    ------
    NoSolution
        If the bound cannot be met with ``r < 1`` for the given loss ``a``.
    """
    if n < 2 or b < 1:
        raise ValueError(f"need N >= 2 and b >= 1, got N={n}, b={b}")
    geometry = geometry or RingGeometry()
    half = channel_phase(n) / 2.0
    bound = 2.0**-b
    top = a * (1.0 - 1e-15)
    if _overlap_ratio(top, half) >= bound:
        raise NoSolution(f"no coupling reaches 2^-{b} overlap at N={n} with a={a}")
    if _overlap_ratio(0.0, half) <= bound:
        rra = 1e-12
    else:
        rra = brentq(lambda x: _overlap_ratio(x, half) - bound, 0.0, top, xtol=1e-15, rtol=1e-15)
    # rounding near r -> 1 makes the drop ratio move in steps; widen the nudge geometrically
    step = 4.0 * math.ulp(rra) + 1e-15
    for _ in range(64):
        r = math.sqrt(rra / a)
        dev = MrrDevice(geometry, CouplerSet(r, r, a))
        try:
            plan_channels(n, dev, b)
            return dev
        except InsufficientQ:
            rra = min(top, rra + step)
            step *= 2.0
    raise NoSolution("root refinement did not satisfy the strict overlap bound")


def required_q(n: int, b: int = 8, geometry: RingGeometry | None = None, a: float = 1.0) -> float:
    """Loaded Q needed for an N-channel plan at b-bit precision."""
    return quality_factor(required_device(n, b, geometry, a))


def max_circuit_size(q: float, b: int = 8, geometry: RingGeometry | None = None,
                     a: float = 1.0) -> int:
    """Largest N with ``required_q(N) <= q``; 1 if even N = 2 needs more."""
    if not q > 0:
        raise ValueError("Q must be positive")
    if required_q(2, b, geometry, a) > q:
        return 1
    lo, hi = 2, 4
    while required_q(hi, b, geometry, a) <= q:
        lo, hi = hi, hi * 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if required_q(mid, b, geometry, a) <= q:
            lo = mid
        else:
            hi = mid
    return lo


def tops(n: int, f_clk: float) -> float:
    """``2 N² f`` tera-operations per second (one multiply and one add per element)."""
    if n < 1 or not f_clk > 0:
        raise ValueError("need N >= 1 and f_clk > 0")
    return 2.0 * n * n * f_clk * 1e-12


def power_mvm(n: int, f_clk: float, params: PowerParams = PowerParams(),
              shifter_kind: ShifterKind = "thermo_optic") -> float:
    """
    Signal power ``f·E_sig·N`` plus phase-shifter power ``(Δφ/2π)·N²·E_ps``.

    With ``Δφ = 8π/(3N)`` the shifter term is ``(4N/3)·E_ps``.
    """
    if n < 1 or not f_clk > 0:
        raise ValueError("need N >= 1 and f_clk > 0")
    shifter = channel_phase(n) / (2.0 * math.pi) * n * n * params.shifter(shifter_kind)
    return f_clk * params.e_signal * n + shifter


def bench_point(n: int, f_clk: float, params: PowerParams = PowerParams(),
                shifter_kind: ShifterKind = "thermo_optic", b: int = 8,
                geometry: RingGeometry | None = None) -> BenchPoint:
    t = tops(n, f_clk)
    p = power_mvm(n, f_clk, params, shifter_kind)
    q = required_q(n, b, geometry) if n >= 2 else float("nan")
    return BenchPoint(n, b, f_clk, q, t, p, t / p, shifter_kind)


def efficiency_curve(n_range: Iterable[int], f_clk: float = 3e9,
                     params: PowerParams = PowerParams(), b: int = 8,
                     geometry: RingGeometry | None = None) -> dict:
    """``{shifter_kind: [BenchPoint, ...]}`` over ``n_range``."""
    ns = list(n_range)
    if not ns:
        raise ValueError("n_range is empty")
    qs = {n: (required_q(n, b, geometry) if n >= 2 else float("nan")) for n in ns}
    out = {}
    for kind in SHIFTER_KINDS:
        pts = []
        for n in ns:
            t = tops(n, f_clk)
            p = power_mvm(n, f_clk, params, kind)
            pts.append(BenchPoint(n, b, f_clk, qs[n], t, p, t / p, kind))
        out[kind] = pts
    return out


Method = Literal["backprop", "brute_force"]

# reference brute-force / backprop ratio at N = 100, quoted without an operation-count breakdown
REPORTED_SPEEDUP = 2000.0


def parameter_count(n: int, layers: int = 3) -> int:
    """Weights of an N-N-…-N network with ``layers`` layers of neurons."""
    return (layers - 1) * n * n


def training_time(n: int, method: Method, f_clk: float = 3e9, layers: int = 3) -> float:
    """
    Seconds per parameter update.

    ``backprop``: three MVM clocks (forward reuse, one transpose, outer
    products off-chip) independent of N. ``brute_force``: one forward of
    ``layers - 1`` MVMs per parameter.
    """
    if n < 1 or not f_clk > 0:
        raise ValueError("need N >= 1 and f_clk > 0")
    if method == "backprop":
        return 3.0 / f_clk
    if method == "brute_force":
        return parameter_count(n, layers) * (layers - 1) / f_clk
    raise ValueError(f"unknown method {method!r}")


def speedup(n: int, layers: int = 3, convention: str = "full_forward") -> float:
    """
    Brute-force / backprop time ratio.

    ``full_forward`` charges every parameter a complete forward pass;
    ``one_mvm`` charges a single MVM per parameter.
    """
    p = parameter_count(n, layers)
    if convention == "full_forward":
        return p * (layers - 1) / 3.0
    if convention == "one_mvm":
        return p / 3.0
    raise ValueError(f"unknown convention {convention!r}")


def training_time_metadata(n: int = 100, layers: int = 3) -> dict:
    return {
        "N": n,
        "layers": layers,
        "parameters": parameter_count(n, layers),
        "backprop_mvms_per_update": 3,
        "bruteforce_mvms_per_parameter": layers - 1,
        "ratio_full_forward": speedup(n, layers, "full_forward"),
        "ratio_one_mvm": speedup(n, layers, "one_mvm"),
        "reported_ratio": REPORTED_SPEEDUP,
        "note": "the reference ratio comes without an operation count; both conventions are listed",
    }


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _g(x: float) -> str:
    return f"{x:.10g}"


def required_q_csv(ns: Iterable[int], b: int = 8, geometry: RingGeometry | None = None) -> str:
    return _csv(["N", "required_Q"], [[n, _g(required_q(n, b, geometry))] for n in ns])


def efficiency_csv(ns: Iterable[int], f_clk: float = 3e9, params: PowerParams = PowerParams()) -> str:
    rows = []
    for n in ns:
        t = tops(n, f_clk)
        pto = power_mvm(n, f_clk, params, "thermo_optic")
        pmos = power_mvm(n, f_clk, params, "hybrid_mos")
        rows.append([n, _g(t), _g(pto), _g(pmos), _g(t / pto), _g(t / pmos)])
    return _csv(["N", "tops", "power_to_W", "power_mos_W", "eff_to", "eff_mos"], rows)


def training_time_csv(ns: Iterable[int], f_clk: float = 3e9, layers: int = 3) -> str:
    rows = []
    for n in ns:
        tb = training_time(n, "backprop", f_clk, layers)
        tf = training_time(n, "brute_force", f_clk, layers)
        rows.append([n, _g(tb), _g(tf), _g(tf / tb)])
    return _csv(["N", "t_backprop_s", "t_bruteforce_s", "ratio"], rows)


def log_range(lo: int, hi: int, points: int) -> list:
    """Sorted unique integers spaced roughly logarithmically over ``[lo, hi]``."""
    return sorted({int(round(v)) for v in np.geomspace(lo, hi, points)})
