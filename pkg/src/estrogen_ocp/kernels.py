"""Compiled vector fields for the fast integration path.

Every kernel acts on a flat state ``y`` and takes the same argument list
``(p, v1, v2, v3, G1, G2)``: a packed parameter vector (see :func:`pack`),
three 1-D and two 2-D arrays whose meaning depends on the kernel. Controls are
piecewise linear on a node grid ``(ctl_t, ctl_u)``; a constant control is a
one-node grid.
"""

from __future__ import annotations

import math

import numba as nb
import numpy as np

from .model import ModelParams

PACK_ORDER = ("k1", "a1", "m1", "mu", "r", "alpha", "k2", "m2", "k3",
              "c", "l", "a2", "a3", "eta")
K1, A1, M1, MU, RR, ALPHA, K2, M2, K3, C, L, A2, A3, ETA = range(len(PACK_ORDER))


def pack(prm: ModelParams) -> np.ndarray:
    return np.array([getattr(prm, name) for name in PACK_ORDER], dtype=float)


def control_grid(control, t_ref=0.0):
    """``(ctl_t, ctl_u)`` arrays for a constant or a ``(times, values)`` pair."""
    if np.ndim(control) == 0:
        return np.array([float(t_ref)]), np.array([float(control)])
    times, values = control
    return np.ascontiguousarray(times, dtype=float), np.ascontiguousarray(values, dtype=float)


@nb.njit(cache=True)
def hill(E, a, c, l):
    if a == 0.0:
        return c if E <= 0.0 else 0.0
    q = (E / a) ** l
    if not np.isfinite(q):
        return 0.0
    return c / (1.0 + q)


@nb.njit(cache=True)
def hill_dE(E, a, c, l):
    if a == 0.0:
        return 0.0
    if E <= 0.0:
        return -c / a if l == 1.0 else 0.0
    q = (E / a) ** l
    if not np.isfinite(q):
        return 0.0
    w = 1.0 / (1.0 + q)
    return -c * l * q * w * w / E


@nb.njit(cache=True)
def _interp1(t, xs, ys):
    if xs.size == 1:
        return ys[0]
    return np.interp(t, xs, ys)


@nb.njit(cache=True)
def basic_rhs(t, y, p, v1, v2, v3, G1, G2):
    T, E, F = y[0], y[1], y[2]
    out = np.empty(3)
    out[0] = p[K1] * E / (p[A1] + E) * T * (1.0 - p[M1] * T)
    out[1] = p[RR] * F - p[MU] * E
    out[2] = -p[ALPHA] * T * F
    return out


@nb.njit(cache=True)
def _extended_into(out, S, R, E, F, u, p, j, B):
    growth = p[K1] * E / (p[A1] + E)
    crowd = 1.0 - p[M1] * (S + p[ETA] * R)
    death = hill(E, p[A2], p[C], p[L])
    adapt = hill(E, p[A3], p[C], p[L])
    out[j] = growth * S * crowd - death * S - adapt * S
    out[B + j] = p[K3] * R * crowd + adapt * S
    out[2 * B + j] = (1.0 - u) * p[RR] * F - p[MU] * E
    out[3 * B + j] = p[K2] * F * (1.0 - p[M2] * F) - p[ALPHA] * (S + R) * F


@nb.njit(cache=True)
def extended_rhs(t, y, p, ctl_t, ctl_u, v3, G1, G2):
    out = np.empty(4)
    _extended_into(out, y[0], y[1], y[2], y[3], _interp1(t, ctl_t, ctl_u), p, 0, 1)
    return out


@nb.njit(cache=True)
def extended_batch_rhs(t, y, p, ctl_t, v2, v3, ctl_u, G2):
    """Members stored as ``(4, B)`` flattened; ``ctl_u`` has shape ``(B, N)``."""
    B = ctl_u.shape[0]
    out = np.empty(4 * B)
    n = ctl_t.size
    if n == 1:
        i, frac = 0, 0.0
    else:
        i = np.searchsorted(ctl_t, t, side="right") - 1
        i = min(max(i, 0), n - 2)
        frac = (t - ctl_t[i]) / (ctl_t[i + 1] - ctl_t[i])
        frac = min(max(frac, 0.0), 1.0)
    for j in range(B):
        if n == 1:
            u = ctl_u[j, 0]
        else:
            u = ctl_u[j, i] + frac * (ctl_u[j, i + 1] - ctl_u[j, i])
        _extended_into(out, y[j], y[B + j], y[2 * B + j], y[3 * B + j], u, p, j, B)
    return out


@nb.njit(cache=True)
def adjoint_field(lam, x, u, p, wS, wR):
    S, R, E, F = x[0], x[1], x[2], x[3]
    l1, l2, l3, l4 = lam[0], lam[1], lam[2], lam[3]
    m1, eta, k3, alpha = p[M1], p[ETA], p[K3], p[ALPHA]
    g = p[K1] * E / (p[A1] + E)
    dg = p[K1] * p[A1] / (p[A1] + E) ** 2
    h2 = hill(E, p[A2], p[C], p[L])
    h3 = hill(E, p[A3], p[C], p[L])
    dh2 = hill_dE(E, p[A2], p[C], p[L])
    dh3 = hill_dE(E, p[A3], p[C], p[L])
    crowd = 1.0 - m1 * (S + eta * R)
    out = np.empty(4)
    out[0] = (-wS - l1 * (g * (1.0 - m1 * (2.0 * S + eta * R)) - h2 - h3)
              - l2 * (-m1 * k3 * R + h3) + l4 * alpha * F)
    out[1] = (-wR + l1 * g * m1 * eta * S
              - l2 * k3 * (1.0 - m1 * (S + 2.0 * eta * R)) + l4 * alpha * F)
    out[2] = -l1 * (S * crowd * dg - (dh2 + dh3) * S) - l2 * dh3 * S + l3 * p[MU]
    out[3] = (-l3 * (1.0 - u) * p[RR]
              - l4 * (p[K2] - 2.0 * p[K2] * p[M2] * F - alpha * (S + R)))
    return out


@nb.njit(cache=True)
def adjoint_rhs(t, lam, p, grid, u, w, X, dX):
    """Costate equations along a stored forward solution.

    The forward state is cubic Hermite interpolated from its grid values and
    slopes; the control is linear between grid nodes.
    """
    n = grid.size
    i = np.searchsorted(grid, t, side="right") - 1
    i = min(max(i, 0), n - 2)
    h = grid[i + 1] - grid[i]
    s = (t - grid[i]) / h
    s = min(max(s, 0.0), 1.0)
    s2 = s * s
    s3 = s2 * s
    b0 = 2 * s3 - 3 * s2 + 1
    b1 = s3 - 2 * s2 + s
    b2 = -2 * s3 + 3 * s2
    b3 = s3 - s2
    x = np.empty(4)
    for k in range(4):
        x[k] = b0 * X[i, k] + b1 * h * dX[i, k] + b2 * X[i + 1, k] + b3 * h * dX[i + 1, k]
    uu = u[i] + s * (u[i + 1] - u[i])
    return adjoint_field(lam, x, uu, p, w[0], w[1])




# -- compiled driver ----------------------------------------------------------
# All kernels share one argument layout so that a single integration loop,
# dispatching on an integer, can be cached on disk.

BASIC, EXTENDED, BATCH, ADJOINT = range(4)


@nb.njit(cache=True)
def _dispatch(kind, t, y, args):
    p, v1, v2, v3, G1, G2 = args
    if kind == BASIC:
        return basic_rhs(t, y, p, v1, v2, v3, G1, G2)
    if kind == EXTENDED:
        return extended_rhs(t, y, p, v1, v2, v3, G1, G2)
    if kind == BATCH:
        return extended_batch_rhs(t, y, p, v1, v2, v3, G1, G2)
    return adjoint_rhs(t, y, p, v1, v2, v3, G1, G2)


@nb.njit(cache=True)
def _norm_flat_nb(x, ncomp):
    members = x.size // ncomp
    worst = 0.0
    for j in range(members):
        acc = 0.0
        for i in range(ncomp):
            v = x[i * members + j]
            acc += v * v
        acc /= ncomp
        if acc > worst:
            worst = acc
    return math.sqrt(worst)


@nb.njit(cache=True, nogil=True)
def _loop(kind, args, ncomp, t0, y0, f0, direction, stops, record,
                   record_all, record_start, rtol, atol, h, max_steps, clamp):
    n = y0.size
    t = t0
    yf = y0.copy()
    f = f0.copy()
    K = np.empty((7, n))
    span = abs(stops[-1] - t0)
    min_raw = np.inf
    if clamp:
        min_raw = yf.min()
    cap = stops.size + 1 if not record_all else 256
    times = np.empty(cap)
    states = np.empty((cap, n))
    derivs = np.empty((cap, n))
    n_rec = 0
    if record_start:
        times[0] = t
        states[0] = yf
        derivs[0] = f
        n_rec = 1
    A = np.zeros((5, 5))
    A[0, 0] = 1 / 5
    A[1, 0], A[1, 1] = 3 / 40, 9 / 40
    A[2, 0], A[2, 1], A[2, 2] = 44 / 45, -56 / 15, 32 / 9
    A[3, 0], A[3, 1], A[3, 2], A[3, 3] = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
    A[4, 0], A[4, 1], A[4, 2], A[4, 3], A[4, 4] = (9017 / 3168, -355 / 33, 46732 / 5247,
                                                   49 / 176, -5103 / 18656)
    C = np.array([1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])
    B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
    E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])
    ys = np.empty(n)
    y_new = np.empty(n)
    ev = np.empty(n)
    err_old = 1e-4
    n_steps = 0
    stop_idx = 0
    rejected_last = False
    next_stop = stops[0]
    status = 0
    eps = 2.220446049250313e-16

    while True:
        if n_steps >= max_steps:
            status = 1
            break
        remaining = abs(next_stop - t)
        hit = h >= remaining * (1 - 1e-12)
        h_step = remaining if hit else h
        if h_step < 16 * eps * max(abs(t), 1.0):
            status = 2
            break
        dt = direction * h_step

        K[0] = f
        for i in range(5):
            for j in range(n):
                acc = 0.0
                for k in range(i + 1):
                    acc += A[i, k] * K[k, j]
                ys[j] = yf[j] + dt * acc
            K[i + 1] = _dispatch(kind, t + C[i] * dt, ys, args)
        for j in range(n):
            acc = 0.0
            for k in range(6):
                acc += B[k] * K[k, j]
            y_new[j] = yf[j] + dt * acc
        t_new = next_stop if hit else t + dt
        K[6] = _dispatch(kind, t_new, y_new, args)
        for j in range(n):
            acc = 0.0
            for k in range(7):
                acc += E[k] * K[k, j]
            ev[j] = dt * acc / (atol + rtol * max(abs(yf[j]), abs(y_new[j])))
        err = _norm_flat_nb(ev, ncomp)
        n_steps += 1

        if not np.isfinite(err):
            if not np.all(np.isfinite(y_new)) and h_step > 1e-6 * span:
                h = h_step * 0.2
                rejected_last = True
                continue
            status = 3
            break

        if err <= 1.0:
            if err > 0:
                fac = (err ** 0.17 * err_old ** -0.04) / 0.9
            else:
                fac = 0.1
            fac = min(5.0, max(0.1, fac))
            h_new = h_step / fac
            if rejected_last:
                h_new = min(h_new, h_step)
            err_old = max(err, 1e-4)
            rejected_last = False
            f_new = K[6].copy()
            if clamp:
                m = y_new.min()
                if m < 0:
                    min_raw = min(min_raw, m)
                    if m < -1e-10:
                        t = t_new
                        status = 4
                        break
                    for j in range(n):
                        if y_new[j] < 0:
                            y_new[j] = 0.0
                    f_new = _dispatch(kind, t_new, y_new, args)
            t = t_new
            yf[:] = y_new
            f = f_new
            if record_all or (hit and record[stop_idx]):
                if n_rec == times.size:
                    times2 = np.empty(2 * n_rec)
                    states2 = np.empty((2 * n_rec, n))
                    derivs2 = np.empty((2 * n_rec, n))
                    times2[:n_rec] = times
                    states2[:n_rec] = states
                    derivs2[:n_rec] = derivs
                    times, states, derivs = times2, states2, derivs2
                times[n_rec] = t
                states[n_rec] = yf
                derivs[n_rec] = f
                n_rec += 1
            if hit:
                stop_idx += 1
                if stop_idx == stops.size:
                    break
                next_stop = stops[stop_idx]
                if h_step >= h:
                    h = h_new
                else:
                    h = max(h_new, h)
            else:
                h = h_new
        else:
            h = h_step / min(5.0, err ** 0.17 / 0.9)
            rejected_last = True

    return (status, t, times[:n_rec].copy(), states[:n_rec].copy(),
            derivs[:n_rec].copy(), min_raw, n_steps)


_NO1 = np.zeros(1)
_NO2 = np.zeros((1, 1))


def make_args(p, v1=None, v2=None, v3=None, G1=None, G2=None):
    """Pack kernel arguments, filling unused slots with placeholders."""
    def one(v):
        return _NO1 if v is None else np.ascontiguousarray(v, dtype=float)

    def two(v):
        return _NO2 if v is None else np.ascontiguousarray(v, dtype=float)
    return (one(p), one(v1), one(v2), one(v3), two(G1), two(G2))


class Kernel:
    """Handle for a compiled vector field, usable with ``integrate(..., args=)``."""

    def __init__(self, kind: int, name: str):
        self.kind = kind
        self.name = name

    def __call__(self, t, y, args):
        return _dispatch(self.kind, float(t), np.ascontiguousarray(y, dtype=float).ravel(), args)

    def run(self, args, *rest):
        return _loop(self.kind, args, *rest)

    def __repr__(self):
        return f"Kernel({self.name})"


BASIC_KERNEL = Kernel(BASIC, "basic")
EXTENDED_KERNEL = Kernel(EXTENDED, "extended")
BATCH_KERNEL = Kernel(BATCH, "extended-batch")
ADJOINT_KERNEL = Kernel(ADJOINT, "adjoint")


def extended_args(prm, control=0.0, t_ref=0.0):
    ctl_t, ctl_u = control_grid(control, t_ref)
    return make_args(pack(prm), ctl_t, ctl_u)
