"""Optimal aromatase-inhibitor schedules by forward-backward sweep.

The cost ``J = int (w_S S + w_R R + w_u/2 u^2) dt`` over [t_tr, t_f] is
minimized over controls ``u_a <= u <= u_b`` for the extended model. Each
sweep integrates the state forward, the costates backward from zero,
projects the stationary control ``r F lambda3 / w_u`` onto the bounds, and
moves toward it by the convex-combination weight with the lowest cost.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import kernels
from .control import DEFAULT_BOUNDS, ControlGrid
from .errors import DomainError, EvaluationError
from .integrate import IntegratorConfig, Trajectory, integrate
from .model import EXTENDED_NAMES, ModelParams, extended_field

GRID_N = 2001
MAX_ITER = 500
REL_TOL = 1e-5
LINE_SEARCH = tuple(np.arange(1, 21) / 20)


@dataclass(frozen=True)
class OcpWeights:
    w_S: float = 1.0
    w_R: float = 1.0
    w_u: float = 1.0

    def __post_init__(self):
        bad = [n for n in ("w_S", "w_R", "w_u") if not getattr(self, n) > 0]
        if bad:
            raise DomainError(f"weights must be > 0: {', '.join(bad)}")


class AdjointState(NamedTuple):
    lambda1: float
    lambda2: float
    lambda3: float
    lambda4: float


@dataclass
class FbsReport:
    iterations: int = 0
    J_history: list = field(default_factory=list)
    s_history: list = field(default_factory=list)
    rel_err_history: list = field(default_factory=list)
    converged: bool = False
    stagnated: bool = False
    final_rel_error: float = float("inf")
    component_errors: list = field(default_factory=list)  # S,R,E,F, lambda1..4, u
    message: str = ""


# -- cost, costates, projection ----------------------------------------------

def _simpson(y, t):
    """Composite Simpson rule on a uniform grid along the first axis."""
    n = len(t)
    if n < 3:
        raise DomainError("Simpson quadrature needs at least 3 nodes")
    h = (t[-1] - t[0]) / (n - 1)
    if n % 2 == 1:
        return h / 3 * (y[0] + y[-1] + 4 * y[1:-1:2].sum(axis=0) + 2 * y[2:-1:2].sum(axis=0))
    # even node count: Simpson on the first n-3 intervals, 3/8 rule on the rest
    head = _simpson(y[:-3], t[:-3]) if n > 4 else 0.0
    return head + 3 * h / 8 * (y[-4] + 3 * y[-3] + 3 * y[-2] + y[-1])


def _control_energy(u, t):
    """Exact integral of u^2 for u linear between nodes, along the first axis."""
    a, b = u[:-1], u[1:]
    h = np.diff(t).reshape((-1,) + (1,) * (u.ndim - 1))
    return (h / 3 * (a * a + a * b + b * b)).sum(axis=0)


def cost(traj: Trajectory, w: OcpWeights) -> float:
    """Cost functional of a trajectory with control samples on a uniform grid.

    State terms use composite Simpson. The control term is integrated
    exactly for the piecewise-linear control the integrator applies;
    Simpson's alternating node weights would make the discrete cost
    disagree with the pointwise projection rule and stall the sweep.
    """
    if traj.controls is None:
        raise DomainError("trajectory has no control samples")
    t = traj.times
    if len(t) >= 3 and not np.allclose(np.diff(t), (t[-1] - t[0]) / (len(t) - 1), rtol=1e-9, atol=0):
        raise DomainError("cost needs a uniform time grid")
    X, u = traj.states, traj.controls
    return float(_simpson(w.w_S * X[:, 0] + w.w_R * X[:, 1], t)
                 + 0.5 * w.w_u * _control_energy(u, t))


def hamiltonian(state, adjoint, u, params: ModelParams, w: OcpWeights) -> float:
    """``w_S S + w_R R + w_u/2 u^2 + lambda . f(state, u)``."""
    x = np.asarray(state, dtype=float)
    lam = np.asarray(adjoint, dtype=float)
    return float(w.w_S * x[0] + w.w_R * x[1] + 0.5 * w.w_u * u * u
                 + lam @ extended_field(x, params, u))


def adjoint_rhs(state, adjoint, u, params: ModelParams, w: OcpWeights) -> AdjointState:
    """Time derivatives of the costates (equal to minus dH/dstate)."""
    x = np.asarray(state, dtype=float)
    lam = np.asarray(adjoint, dtype=float)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(lam)) and np.isfinite(u)):
        raise EvaluationError("non-finite input to adjoint_rhs")
    d = kernels.adjoint_field(lam, x, float(u), kernels.pack(params), w.w_S, w.w_R)
    return AdjointState(*(float(v) for v in d))


def project_control(lambda3, F, params: ModelParams, w_u: float, bounds=DEFAULT_BOUNDS):
    """Stationary control ``r F lambda3 / w_u`` clipped to ``bounds``."""
    if not w_u > 0:
        raise DomainError("w_u must be > 0")
    ua, ub = bounds
    return np.clip(params.r * np.asarray(F) * np.asarray(lambda3) / w_u, ua, ub)


# -- sweep --------------------------------------------------------------------

def _rel_change(new, old):
    return float(np.abs(new - old).sum() / max(np.abs(new).sum(), 1e-12))


class _Sweeper:
    def __init__(self, params, y0, grid, w, config):
        self.p = kernels.pack(params)
        self.y0 = np.asarray(y0, dtype=float)
        self.grid = grid
        self.w = w
        self.wvec = np.array([w.w_S, w.w_R])
        dt = grid[1] - grid[0]
        # steps land on every node, so each step sees a smooth control
        self.config = config or IntegratorConfig(initial_step=dt)

    def forward_batch(self, U):
        """States (B, N, 4) and slopes for each row of the control matrix U."""
        B = U.shape[0]
        y0 = np.repeat(self.y0[:, None], B, axis=1)
        tr = integrate(kernels.BATCH_KERNEL, y0, (self.grid[0], self.grid[-1]),
                       config=self.config, output_grid=self.grid, clamp=True,
                       args=kernels.make_args(self.p, self.grid, G1=U))
        return tr.states.transpose(2, 0, 1), tr.derivs.transpose(2, 0, 1)

    def backward(self, X, dX, u):
        tr = integrate(kernels.ADJOINT_KERNEL, np.zeros(4), (self.grid[-1], self.grid[0]),
                       config=self.config, output_grid=self.grid,
                       args=kernels.make_args(self.p, self.grid, u, self.wvec, X, dX))
        return tr.states

    def costs(self, X, U):
        states = _simpson((self.w.w_S * X[..., 0] + self.w.w_R * X[..., 1]).T, self.grid)
        return states + 0.5 * self.w.w_u * _control_energy(U.T, self.grid)


def fbs_solve(params: ModelParams, y0, t_tr: float, t_f: float = 25.0,
              w: OcpWeights | None = None, bounds=DEFAULT_BOUNDS, n: int = GRID_N,
              max_iter: int = MAX_ITER, tol: float = REL_TOL,
              config: IntegratorConfig | None = None, u0=None, callback=None):
    """Forward-backward sweep from state ``y0`` at ``t_tr`` to ``t_f``.

    Returns ``(ControlGrid, Trajectory, FbsReport)``. The trajectory holds
    states, controls and, in ``meta['adjoint']``, the costates on the grid.
    If ``max_iter`` sweeps pass without convergence the last iterate is
    returned with ``report.converged`` False.
    """
    w = w or OcpWeights()
    if not t_tr < t_f:
        raise DomainError("t_tr must be < t_f")
    if n < 3:
        raise DomainError("grid needs at least 3 nodes")
    y0 = np.asarray(y0, dtype=float)
    if y0.shape != (4,) or np.any(y0 < 0):
        raise DomainError("initial state must be 4 non-negative values")
    ua, ub = bounds
    if not 0 <= ua <= ub <= 1:
        raise DomainError(f"bad control bounds {bounds}")
    grid = np.linspace(t_tr, t_f, n)
    sw = _Sweeper(params, y0, grid, w, config)
    svals = np.array(LINE_SEARCH)

    u = np.full(n, ua) if u0 is None else np.clip(np.asarray(u0, dtype=float), ua, ub)
    Xb, dXb = sw.forward_batch(u[None, :])
    X, dX = Xb[0], dXb[0]
    L = sw.backward(X, dX, u)
    J = float(sw.costs(Xb, u[None, :])[0])
    report = FbsReport(J_history=[J])

    for it in range(1, max_iter + 1):
        u_cur = project_control(L[:, 2], X[:, 3], params, w.w_u, bounds)
        U = np.clip((1 - svals[:, None]) * u + svals[:, None] * u_cur, ua, ub)
        Xs, dXs = sw.forward_batch(U)
        Js = sw.costs(Xs, U)
        k = int(np.argmin(Js))  # first minimum, i.e. the smallest s among ties
        if Js[k] > J:
            k = 0
            report.stagnated = True
        u_new, X_new, dX_new = U[k], Xs[k], dXs[k]
        L_new = sw.backward(X_new, dX_new, u_new)
        errs = ([_rel_change(X_new[:, i], X[:, i]) for i in range(4)]
                + [_rel_change(L_new[:, i], L[:, i]) for i in range(4)]
                + [_rel_change(u_new, u)])
        err = max(errs)
        report.component_errors = errs
        u, X, dX, L, J = u_new, X_new, dX_new, L_new, float(Js[k])
        report.J_history.append(J)
        report.s_history.append(float(svals[k]))
        report.rel_err_history.append(err)
        report.iterations = it
        report.final_rel_error = err
        if callback is not None:
            callback(it, J, float(svals[k]), err)
        if err < tol:
            report.converged = True
            break

    report.message = (f"converged after {report.iterations} sweeps" if report.converged
                      else f"not converged after {report.iterations} sweeps "
                           f"(relative change {report.final_rel_error:.2e})")
    traj = Trajectory(grid, X, dX, u.copy(), names=EXTENDED_NAMES,
                      meta={"adjoint": L, "t_tr": t_tr, "J": J})
    return ControlGrid(grid, u, (ua, ub)), traj, report


def stationarity_residual(traj: Trajectory, params: ModelParams, w: OcpWeights,
                          bounds=DEFAULT_BOUNDS, margin: float = 1e-6):
    """Max of ``|w_u u - r F lambda3|`` over nodes with u strictly inside the bounds.

    Returns None when no node is interior.
    """
    u = traj.controls
    lam3 = traj.meta["adjoint"][:, 2]
    inside = (u > bounds[0] + margin) & (u < bounds[1] - margin)
    if not inside.any():
        return None
    res = np.abs(w.w_u * u - params.r * traj.states[:, 3] * lam3)
    return float(res[inside].max())


@dataclass
class ScenarioOcp:
    t_tr: float | None
    control: ControlGrid | None
    traj: Trajectory | None
    report: FbsReport | None
    params: ModelParams


def solve_scenario(preset, diet: str, w: OcpWeights | None = None, t_f: float = 25.0,
                   n: int = GRID_N, bounds=DEFAULT_BOUNDS, max_iter: int = MAX_ITER,
                   tol: float = REL_TOL, base: ModelParams | None = None) -> ScenarioOcp:
    """Untreated growth to the treatment start, then the optimal control problem."""
    from .integrate import sample
    from .model import simulate_extended
    from .treatment import detect_treatment_start, get_scenario

    if isinstance(preset, str):
        preset = get_scenario(preset)
    params = preset.params(base)
    untreated = simulate_extended(params, preset.init(diet).extended(), (0.0, t_f))
    t_tr = detect_treatment_start(untreated, params.m1, params.eta)
    if t_tr is None or t_tr >= t_f:
        return ScenarioOcp(t_tr, None, None, None, params)
    y0 = sample(untreated, t_tr)
    control, traj, report = fbs_solve(params, y0, t_tr, t_f, w, bounds, n, max_iter, tol)
    return ScenarioOcp(t_tr, control, traj, report, params)


# -- output -------------------------------------------------------------------

def write_ocp_trajectory(traj: Trajectory, path) -> None:
    from .treatment import write_trajectory_csv

    write_trajectory_csv(traj, path)


def write_ocp_report(report: FbsReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(("iter", "J", "s", "rel_err"))
        wr.writerow((0, "%.12g" % report.J_history[0], "", ""))
        for i, (J, s, e) in enumerate(zip(report.J_history[1:], report.s_history,
                                          report.rel_err_history), start=1):
            wr.writerow((i, "%.12g" % J, "%.2f" % s, "%.6e" % e))


def read_ocp_report(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [{"iter": int(r["iter"]), "J": float(r["J"]),
             "s": float(r["s"]) if r["s"] else None,
             "rel_err": float(r["rel_err"]) if r["rel_err"] else None} for r in rows]
