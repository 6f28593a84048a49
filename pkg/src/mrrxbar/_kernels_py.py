"""Pure numpy implementation of the crossbar hot loops.

Mirrors ``_kernels.pyx`` function for function; used when the compiled
extension is unavailable or ``MRRXBAR_PURE_PYTHON`` is set.
"""

import numpy as np

TWO_PI = 2.0 * np.pi


def wrap_phase(h):
    out = np.mod(h, TWO_PI)
    out[out >= TWO_PI] = 0.0
    return out


def effective_phases(h, kappa):
    h = np.asarray(h, dtype=float)
    if kappa == 0.0:
        return h.copy()
    nb = np.zeros_like(h)
    nb[1:, :] += h[:-1, :]
    nb[:-1, :] += h[1:, :]
    nb[:, 1:] += h[:, :-1]
    nb[:, :-1] += h[:, 1:]
    return wrap_phase(h + kappa * nb)


def leak_tensor(off, h_eff, gain, num, rra, leakage):
    """Gain-weighted drop of element (pd i, port j) at channel k, shape (N, N, N)."""
    off = np.asarray(off, dtype=float)
    h_eff = np.asarray(h_eff, dtype=float)
    gain = np.asarray(gain, dtype=float)
    n = h_eff.shape[0]
    if leakage:
        phi = off[:, None, :] + h_eff[:, :, None]
        return gain[:, :, None] * num / (1.0 - 2.0 * rra * np.cos(phi) + rra * rra)
    out = np.zeros((n, n, n))
    idx = np.arange(n)
    phi = np.diag(off)[:, None] + h_eff
    out[idx, :, idx] = gain * num / (1.0 - 2.0 * rra * np.cos(phi) + rra * rra)
    return out


def leak_sum(off, h_eff, gain, num, rra, leakage):
    """Channel-summed response, shape (N, N)."""
    return leak_tensor(off, h_eff, gain, num, rra, leakage).sum(axis=2)


def invert_drop(raw, t0, finesse):
    """Detuning magnitude at which the isolated ring drops ``raw``."""
    raw = np.asarray(raw, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        x = np.where(raw > 0, (t0 / np.where(raw > 0, raw, 1.0) - 1.0) / finesse, 1.0)
    return 2.0 * np.arcsin(np.sqrt(np.clip(x, 0.0, 1.0)))


def _boundary_distance(h):
    x = np.mod(h, TWO_PI)
    return np.minimum(x, TWO_PI - x)


def program_loop(h0, target, off, gain, num, rra, leakage, kappa, dirs, zero, span,
                 t0, finesse, ctrl_gain, tol, max_rounds, noise, floor_ratio,
                 margin, max_switch):
    """
    Feedback loop: probe, compare with target, step every heater.

    A ring whose next set point would land within ``margin`` of the 0/2π
    heater boundary jumps to its mirror detuning when that lies further
    from the boundary (at most ``max_switch`` times per ring).

    Returns ``(phases, per_round_max_error, converged)``.
    """
    h = np.array(h0, dtype=float)
    target = np.asarray(target, dtype=float)
    n = h.shape[0]
    side = np.repeat(np.asarray(dirs, dtype=float)[:, None], n, axis=1)
    switches = np.zeros((n, n))
    d_tgt = invert_drop(zero + span * target, t0, finesse)
    errors = []
    for r in range(max_rounds):
        raw = leak_sum(off, effective_phases(h, kappa), gain, num, rra, leakage)
        nz = noise[r]
        raw = raw * (1.0 + nz) + floor_ratio * nz
        err = (raw - zero) / span - target
        worst = float(np.max(np.abs(err)))
        errors.append(worst)
        if worst < tol:
            return h, errors, True
        d_meas = invert_drop(raw, t0, finesse)
        step = h + side * ctrl_gain * (d_tgt - d_meas)
        mirror = h - side * (d_tgt + d_meas)
        dist = _boundary_distance(step)
        jump = (dist < margin) & (_boundary_distance(mirror) > dist) & (switches < max_switch)
        step[jump] = mirror[jump]
        side[jump] *= -1.0
        switches[jump] += 1
        h = wrap_phase(step)
    return h, errors, False
