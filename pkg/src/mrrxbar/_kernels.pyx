# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled crossbar hot loops; same signatures as ``_kernels_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sin, asin, sqrt, fmod, fabs, M_PI

cnp.import_array()

cdef double TWO_PI = 2.0 * M_PI


cdef inline double _wrap(double x) nogil:
    cdef double y = fmod(x, TWO_PI)
    if y < 0:
        y += TWO_PI
    if y >= TWO_PI:
        y = 0.0
    return y


cdef inline double _drop(double phi, double num, double rra) nogil:
    return num / (1.0 - 2.0 * rra * cos(phi) + rra * rra)


cdef inline double _invert(double raw, double t0, double finesse) nogil:
    cdef double x
    if raw <= 0:
        x = 1.0
    else:
        x = (t0 / raw - 1.0) / finesse
    if x < 0:
        x = 0.0
    elif x > 1:
        x = 1.0
    return 2.0 * asin(sqrt(x))


cdef void _effective(const double[:, ::1] h, double kappa, double[:, ::1] out) nogil:
    cdef Py_ssize_t n = h.shape[0], m = h.shape[1], i, j
    cdef double nb
    for i in range(n):
        for j in range(m):
            if kappa == 0.0:
                out[i, j] = h[i, j]
                continue
            nb = 0.0
            if i > 0:
                nb += h[i - 1, j]
            if i < n - 1:
                nb += h[i + 1, j]
            if j > 0:
                nb += h[i, j - 1]
            if j < m - 1:
                nb += h[i, j + 1]
            out[i, j] = _wrap(h[i, j] + kappa * nb)


cdef void _leak_sum(const double[:, ::1] off, const double[:, ::1] he,
                    const double[:, ::1] gain,
                    double num, double rra, bint leakage, double[:, ::1] out) nogil:
    cdef Py_ssize_t n = he.shape[0], i, j, k
    cdef double acc
    for i in range(n):
        for j in range(n):
            if leakage:
                acc = 0.0
                for k in range(n):
                    acc += _drop(off[i, k] + he[i, j], num, rra)
            else:
                acc = _drop(off[i, i] + he[i, j], num, rra)
            out[i, j] = gain[i, j] * acc


def wrap_phase(h):
    cdef const double[:, ::1] src = np.ascontiguousarray(h, dtype=np.float64)
    out = np.empty((src.shape[0], src.shape[1]))
    cdef double[:, ::1] dst = out
    cdef Py_ssize_t i, j
    for i in range(src.shape[0]):
        for j in range(src.shape[1]):
            dst[i, j] = _wrap(src[i, j])
    return out


def effective_phases(h, double kappa):
    cdef const double[:, ::1] src = np.ascontiguousarray(h, dtype=np.float64)
    out = np.empty((src.shape[0], src.shape[1]))
    _effective(src, kappa, out)
    return out


def leak_tensor(off, h_eff, gain, double num, double rra, bint leakage):
    cdef const double[:, ::1] o = np.ascontiguousarray(off, dtype=np.float64)
    cdef const double[:, ::1] he = np.ascontiguousarray(h_eff, dtype=np.float64)
    cdef const double[:, ::1] g = np.ascontiguousarray(gain, dtype=np.float64)
    cdef Py_ssize_t n = he.shape[0], i, j, k
    out = np.zeros((n, n, n))
    cdef double[:, :, ::1] t = out
    for i in range(n):
        for j in range(n):
            for k in range(n):
                if leakage or k == i:
                    t[i, j, k] = g[i, j] * _drop(o[i, k] + he[i, j], num, rra)
    return out


def leak_sum(off, h_eff, gain, double num, double rra, bint leakage):
    cdef const double[:, ::1] o = np.ascontiguousarray(off, dtype=np.float64)
    cdef const double[:, ::1] he = np.ascontiguousarray(h_eff, dtype=np.float64)
    cdef const double[:, ::1] g = np.ascontiguousarray(gain, dtype=np.float64)
    out = np.empty((he.shape[0], he.shape[1]))
    _leak_sum(o, he, g, num, rra, leakage, out)
    return out


def invert_drop(raw, double t0, double finesse):
    arr = np.asarray(raw, dtype=np.float64)
    flat = np.ascontiguousarray(arr.ravel())
    cdef const double[::1] src = flat
    res = np.empty(flat.shape[0])
    cdef double[::1] dst = res
    cdef Py_ssize_t i
    for i in range(src.shape[0]):
        dst[i] = _invert(src[i], t0, finesse)
    return res.reshape(arr.shape)


cdef inline double _bdist(double x) nogil:
    cdef double y = _wrap(x)
    return y if y < TWO_PI - y else TWO_PI - y


def program_loop(h0, target, off, gain, double num, double rra, bint leakage,
                 double kappa, dirs, double zero, double span, double t0,
                 double finesse, double ctrl_gain, double tol, int max_rounds,
                 noise, double floor_ratio, double margin, int max_switch):
    h_arr = np.array(h0, dtype=np.float64, order="C")
    cdef double[:, ::1] h = h_arr
    cdef const double[:, ::1] tgt = np.ascontiguousarray(target, dtype=np.float64)
    cdef const double[:, ::1] o = np.ascontiguousarray(off, dtype=np.float64)
    cdef const double[:, ::1] g = np.ascontiguousarray(gain, dtype=np.float64)
    cdef const double[::1] dr = np.ascontiguousarray(dirs, dtype=np.float64)
    cdef const double[:, :, ::1] nz = np.ascontiguousarray(noise, dtype=np.float64)
    cdef Py_ssize_t n = h.shape[0], i, j
    cdef int r
    cdef double[:, ::1] he = np.empty((n, n))
    cdef double[:, ::1] raw = np.empty((n, n))
    cdef double[:, ::1] side = np.empty((n, n))
    cdef double[:, ::1] d_tgt = np.empty((n, n))
    cdef int[:, ::1] switches = np.zeros((n, n), dtype=np.intc)
    cdef double e, worst, dm, step, mirror, ds
    errors = []
    for i in range(n):
        for j in range(n):
            side[i, j] = dr[i]
            d_tgt[i, j] = _invert(zero + span * tgt[i, j], t0, finesse)
    for r in range(max_rounds):
        _effective(h, kappa, he)
        _leak_sum(o, he, g, num, rra, leakage, raw)
        worst = 0.0
        for i in range(n):
            for j in range(n):
                raw[i, j] = raw[i, j] * (1.0 + nz[r, i, j]) + floor_ratio * nz[r, i, j]
                e = (raw[i, j] - zero) / span - tgt[i, j]
                if fabs(e) > worst:
                    worst = fabs(e)
        errors.append(worst)
        if worst < tol:
            return h_arr, errors, True
        for i in range(n):
            for j in range(n):
                dm = _invert(raw[i, j], t0, finesse)
                step = h[i, j] + side[i, j] * ctrl_gain * (d_tgt[i, j] - dm)
                ds = _bdist(step)
                if ds < margin and switches[i, j] < max_switch:
                    mirror = h[i, j] - side[i, j] * (d_tgt[i, j] + dm)
                    if _bdist(mirror) > ds:
                        step = mirror
                        side[i, j] = -side[i, j]
                        switches[i, j] += 1
                h[i, j] = _wrap(step)
    return h_arr, errors, False
