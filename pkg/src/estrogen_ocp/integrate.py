"""Adaptive Dormand-Prince 5(4) integrator with cubic Hermite dense output.

States may be arrays of any shape. The first axis holds the state
components; any trailing axes are treated as independent members of a
batch that share one step sequence (the error norm is the worst member's
RMS norm), which is how the control line search evaluates many candidate
controls in one sweep.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, EvaluationError, IntegrationError, IntegrityError

CLAMP_ATOL = 1e-10

# Dormand & Prince (1980) tableau
_C = (1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0)
_A = (
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
)
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
# 5th minus embedded 4th order weights, FSAL stage last
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])

_SAFETY = 0.9
_BETA = 0.04
_EXPO = 0.2 - 0.75 * _BETA
_FAC_MIN = 0.2
_FAC_MAX = 10.0
_EPS = float(np.finfo(float).eps)


@dataclass(frozen=True)
class IntegratorConfig:
    rtol: float = 1e-8
    atol: float = 1e-10
    max_steps: int = 1_000_000
    initial_step: float | None = None

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol > 0):
            raise DomainError("rtol and atol must be positive")
        if self.max_steps < 1:
            raise DomainError("max_steps must be >= 1")
        if self.initial_step is not None and not self.initial_step > 0:
            raise DomainError("initial_step must be positive")

    def halved(self) -> "IntegratorConfig":
        return IntegratorConfig(self.rtol / 2, self.atol / 2, self.max_steps, self.initial_step)


@dataclass
class Trajectory:
    """Time samples of a solution.

    ``states[i]`` is the state at ``times[i]``; ``derivs[i]`` the vector
    field there (used by :func:`sample`). ``controls`` is optional.
    ``min_raw`` is the most negative component seen before clamping.
    """

    times: np.ndarray
    states: np.ndarray
    derivs: np.ndarray | None = None
    controls: np.ndarray | None = None
    names: tuple[str, ...] = ()
    min_raw: float = math.inf
    n_steps: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        if len(self.times) != len(self.states):
            raise ValueError("times and states differ in length")
        if len(self.times) > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("trajectory times must be strictly increasing")

    def __len__(self):
        return len(self.times)

    def __getitem__(self, name):
        if name == "u":
            return self.controls
        return self.states[:, self.names.index(name)]

    @property
    def final(self):
        return self.states[-1]


def _rms_norm(x):
    if x.ndim == 1:
        return math.sqrt(float(np.dot(x, x)) / x.size)
    return float(np.sqrt(np.max(np.mean(x * x, axis=0))))


def _initial_step(rhs, t0, y0, f0, direction, rtol, atol, span):
    scale = atol + rtol * np.abs(y0)
    d0 = _rms_norm(y0 / scale)
    d1 = _rms_norm(f0 / scale)
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    h0 = min(h0, span)
    y1 = y0 + direction * h0 * f0
    f1 = rhs(t0 + direction * h0, y1)
    d2 = _rms_norm((f1 - f0) / scale) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1, span)


_OK, _BUDGET, _UNDERFLOW, _NONFINITE, _NEGATIVE = range(5)


def _norm_flat(x, ncomp):
    """Worst per-member RMS norm of a flattened ``(ncomp, members)`` array."""
    members = x.size // ncomp
    if members == 1:
        return math.sqrt(float(np.dot(x, x)) / x.size)
    return math.sqrt(float(np.max(np.mean((x * x).reshape(ncomp, members), axis=0))))


def _prepare_stops(t0, t1, direction, output_grid):
    """Step targets in integration order and whether each is recorded."""
    if output_grid is None:
        return np.array([t1]), np.array([True]), True, True
    grid = np.asarray(output_grid, dtype=float).ravel()
    lo, hi = min(t0, t1), max(t0, t1)
    tol = 1e-12 * max(1.0, abs(lo), abs(hi))
    if grid.size == 0 or grid.min() < lo - tol or grid.max() > hi + tol:
        raise DomainError("output grid outside integration span")
    grid = np.unique(np.clip(grid, lo, hi))
    if direction < 0:
        grid = grid[::-1]
    record_start = bool(np.any(grid == t0))
    stops = [float(s) for s in grid if direction * (s - t0) > 0]
    record = [True] * len(stops)
    if not stops or stops[-1] != t1:
        stops.append(t1)
        record.append(False)
    return np.array(stops), np.array(record), False, record_start


def _python_loop(rhs, shape, t0, y0, f0, direction, stops, record, record_all,
                 record_start, rtol, atol, h, max_steps, clamp):
    ncomp = shape[0] if shape else 1
    t, yf, f = t0, y0.ravel().copy(), f0.ravel().copy()
    K = np.empty((7, yf.size))
    span = abs(stops[-1] - t0)
    min_raw = float(np.min(yf)) if clamp else math.inf
    times, states, derivs = [], [], []
    if record_start:
        times.append(t)
        states.append(yf.copy())
        derivs.append(f.copy())
    err_old = 1e-4
    n_steps = 0
    stop_idx = 0
    rejected_last = False
    next_stop = stops[0]
    status = _OK

    while True:
        if n_steps >= max_steps:
            status = _BUDGET
            break
        remaining = abs(next_stop - t)
        hit = h >= remaining * (1 - 1e-12)
        h_step = remaining if hit else h
        if h_step < 16 * _EPS * max(abs(t), 1.0):
            status = _UNDERFLOW
            break
        dt = direction * h_step

        K[0] = f
        for i in range(5):
            ys = yf + dt * (_A[i] @ K[:i + 1])
            K[i + 1] = rhs(t + _C[i] * dt, ys.reshape(shape)).ravel()
        y_new = yf + dt * (_B @ K[:6])
        t_new = next_stop if hit else t + dt
        K[6] = rhs(t_new, y_new.reshape(shape)).ravel()
        scale = atol + rtol * np.maximum(np.abs(yf), np.abs(y_new))
        err = _norm_flat(dt * (_E @ K) / scale, ncomp)
        n_steps += 1

        if not math.isfinite(err):
            if not np.all(np.isfinite(y_new)) and h_step > 1e-6 * span:
                h = h_step * _FAC_MIN
                rejected_last = True
                continue
            status = _NONFINITE
            break

        if err <= 1.0:
            fac = (err ** _EXPO * err_old ** -_BETA) / _SAFETY if err > 0 else 1 / _FAC_MAX
            fac = min(1 / _FAC_MIN, max(1 / _FAC_MAX, fac))
            h_new = h_step / fac
            if rejected_last:
                h_new = min(h_new, h_step)
            err_old = max(err, 1e-4)
            rejected_last = False
            f_new = K[6].copy()
            if clamp:
                m = float(np.min(y_new))
                if m < 0:
                    min_raw = min(min_raw, m)
                    if m < -CLAMP_ATOL:
                        t = t_new
                        status = _NEGATIVE
                        break
                    y_new = np.where(y_new < 0, 0.0, y_new)
                    f_new = rhs(t_new, y_new.reshape(shape)).ravel()
            t, yf, f = t_new, y_new, f_new
            if record_all or (hit and record[stop_idx]):
                times.append(t)
                states.append(yf.copy())
                derivs.append(f.copy())
            if hit:
                stop_idx += 1
                if stop_idx == len(stops):
                    break
                next_stop = stops[stop_idx]
                # a clipped step says little about the natural step size
                h = h_new if h_step >= h else max(h_new, h)
            else:
                h = h_new
        else:
            h = h_step / min(1 / _FAC_MIN, err ** _EXPO / _SAFETY)
            rejected_last = True

    return (status, t, np.array(times), np.array(states), np.array(derivs),
            min_raw, n_steps)


def integrate(rhs, y0, t_span, config: IntegratorConfig | None = None,
              output_grid=None, clamp=False, names=(), args=None):
    """Integrate ``dy/dt = rhs(t, y)`` over ``t_span``.

    Reverse-time integration is selected by ``t_span[0] > t_span[1]``; the
    returned trajectory is always ordered by increasing time.

    With ``output_grid`` every grid node is hit exactly by a step (nodes
    act as breakpoints), so piecewise-smooth forcing with kinks on the grid
    is integrated without crossing a kink inside a step. Without it, every
    accepted step is recorded.

    With ``clamp`` set, components in ``[-CLAMP_ATOL, 0)`` are reset to 0
    after each step and anything more negative raises IntegrityError.

    When ``args`` is given, ``rhs`` must be a compiled kernel (see
    :mod:`.kernels`) acting on the flattened state; the same stepping
    algorithm then runs compiled.
    """
    config = config or IntegratorConfig()
    t0, t1 = float(t_span[0]), float(t_span[1])
    if t0 == t1:
        raise DomainError("empty integration span")
    y = np.array(y0, dtype=float)
    if not np.all(np.isfinite(y)):
        raise EvaluationError("non-finite initial state")
    shape = y.shape
    direction = 1.0 if t1 > t0 else -1.0
    stops, record, record_all, record_start = _prepare_stops(t0, t1, direction, output_grid)

    if args is None:
        field = rhs
    else:
        def field(t, yy):
            return rhs(t, np.ascontiguousarray(yy, dtype=float).ravel(), args).reshape(shape)
    f = np.asarray(field(t0, y), dtype=float)
    if not np.all(np.isfinite(f)):
        raise EvaluationError(f"non-finite vector field at t={t0}")
    span = abs(t1 - t0)
    if config.initial_step is not None:
        h = min(config.initial_step, span)
    else:
        h = _initial_step(field, t0, y, f, direction, config.rtol, config.atol, span)

    common = (direction, stops, record, record_all, record_start,
              config.rtol, config.atol, h, int(config.max_steps), bool(clamp))
    if args is None:
        out = _python_loop(rhs, shape, t0, y, f, *common)
    else:
        ncomp = shape[0] if shape else 1
        out = rhs.run(args, ncomp, t0, y.ravel(), f.ravel(), *common)
    status, t_last, times, states, derivs, min_raw, n_steps = out

    if status == _BUDGET:
        raise IntegrationError(
            f"step budget of {config.max_steps} exhausted at t={t_last}", last_t=t_last)
    if status == _UNDERFLOW:
        raise IntegrationError(f"step size underflow at t={t_last}", last_t=t_last)
    if status == _NONFINITE:
        raise EvaluationError(f"non-finite vector field near t={t_last}")
    if status == _NEGATIVE:
        raise IntegrityError(
            f"state component {min_raw:.3e} below -{CLAMP_ATOL} at t={t_last}")

    states = states.reshape((len(times),) + shape)
    derivs = derivs.reshape((len(times),) + shape)
    if direction < 0:
        times, states, derivs = times[::-1], states[::-1], derivs[::-1]
    return Trajectory(times, states, derivs, names=tuple(names),
                      min_raw=min_raw, n_steps=n_steps)


class HermiteInterpolant:
    """Piecewise cubic Hermite interpolant through (times, values, slopes)."""

    def __init__(self, times, values, slopes):
        self.times = np.asarray(times, dtype=float)
        self.values = np.asarray(values, dtype=float)
        self.slopes = np.asarray(slopes, dtype=float)
        self._tlist = self.times.tolist()
        self.t_min = self._tlist[0]
        self.t_max = self._tlist[-1]

    def __call__(self, t):
        if not (self.t_min <= t <= self.t_max):
            raise DomainError(f"t={t} outside [{self.t_min}, {self.t_max}]")
        i = bisect.bisect_right(self._tlist, t) - 1
        if i >= len(self._tlist) - 1:
            return self.values[-1].copy()
        ta = self._tlist[i]
        if t == ta:
            return self.values[i].copy()
        h = self._tlist[i + 1] - ta
        s = (t - ta) / h
        s2 = s * s
        s3 = s2 * s
        h00 = 2 * s3 - 3 * s2 + 1
        h10 = s3 - 2 * s2 + s
        h01 = -2 * s3 + 3 * s2
        h11 = s3 - s2
        return (h00 * self.values[i] + h10 * h * self.slopes[i]
                + h01 * self.values[i + 1] + h11 * h * self.slopes[i + 1])


def sample(traj: Trajectory, t):
    """State of ``traj`` at time ``t`` by cubic Hermite interpolation."""
    if traj.derivs is None:
        raise DomainError("trajectory carries no derivatives for interpolation")
    return HermiteInterpolant(traj.times, traj.states, traj.derivs)(float(t))
