"""Aromatase-inhibitor treatment simulations of the extended model.

A run integrates the untreated model until the tumor burden ``S + eta*R``
first reaches a fraction (default 1/4) of the carrying capacity ``1/m1``,
then applies the plan's control until ``t_f``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .control import ControlGrid
from .errors import DomainError, MeasurementError
from .integrate import HermiteInterpolant, IntegratorConfig, Trajectory
from .model import EXTENDED_NAMES, DietInit, ModelParams, simulate_extended

T_FINAL = 25.0
P_SET = (1.0, 0.025, 0.0125, 0.01, 0.001)
ERADICATION_LEVEL = 1.0  # mm^3, the inoculum size
OUTPUT_STEP = 0.01


@dataclass(frozen=True)
class TreatmentPlan:
    """What control to apply once treatment starts.

    kind is ``none``, ``constant`` (uses ``p``), ``alternating`` (``u_b`` for
    ``on_days``, then 0 for ``off_days``, repeating) or ``external`` (uses
    ``grid``, given on absolute times).
    """

    kind: str = "none"
    p: float = 1.0
    u_b: float = 0.99
    on_days: float = 1.0
    off_days: float = 1.0
    grid: ControlGrid | None = None
    start_fraction: float = 0.25

    def __post_init__(self):
        problems = []
        if self.kind not in ("none", "constant", "alternating", "external"):
            problems.append(f"unknown plan kind {self.kind!r}")
        if not 0 < self.p <= 1:
            problems.append(f"p={self.p} outside (0, 1]")
        if not 0 <= self.u_b < 1:
            problems.append(f"u_b={self.u_b} outside [0, 1)")
        if not (self.on_days > 0 and self.off_days > 0):
            problems.append("on_days and off_days must be > 0")
        if self.kind == "external" and self.grid is None:
            problems.append("external plan needs a control grid")
        if not 0 < self.start_fraction <= 1:
            problems.append("start_fraction must be in (0, 1]")
        if problems:
            raise DomainError("; ".join(problems))

    @classmethod
    def none(cls) -> "TreatmentPlan":
        return cls("none")

    @classmethod
    def constant(cls, p: float) -> "TreatmentPlan":
        return cls("constant", p=p)

    @classmethod
    def alternating(cls, u_b=0.99, on_days=1.0, off_days=1.0) -> "TreatmentPlan":
        return cls("alternating", u_b=u_b, on_days=on_days, off_days=off_days)

    @classmethod
    def external(cls, grid: ControlGrid) -> "TreatmentPlan":
        return cls("external", grid=grid)

    @classmethod
    def parse(cls, text: str) -> "TreatmentPlan":
        """Parse ``none``, ``constant:P``, ``alternating:ON/OFF[:U_B]``."""
        kind, _, rest = text.strip().partition(":")
        try:
            if kind == "none" and not rest:
                return cls.none()
            if kind == "constant":
                return cls.constant(float(rest))
            if kind == "alternating":
                phases, _, ub = rest.partition(":")
                on, _, off = phases.partition("/")
                return cls.alternating(float(ub) if ub else 0.99, float(on), float(off or on))
        except ValueError as exc:
            raise DomainError(f"bad plan {text!r}: {exc}") from None
        raise DomainError(f"bad plan {text!r}")

    def segments(self, t_tr: float, t_f: float):
        """Control pieces ``(t0, t1, control)`` covering [t_tr, t_f]."""
        if t_tr >= t_f:
            return []
        if self.kind == "none":
            return [(t_tr, t_f, 0.0)]
        if self.kind == "constant":
            return [(t_tr, t_f, 1.0 - self.p)]
        if self.kind == "external":
            g = self.grid
            lo, hi = g.span
            if lo > t_tr + 1e-9 or hi < t_f - 1e-9:
                raise DomainError(f"control grid [{lo}, {hi}] does not cover [{t_tr}, {t_f}]")
            return [(t_tr, t_f, g)]
        out = []
        t, on = t_tr, True
        while t < t_f:
            t_next = min(t + (self.on_days if on else self.off_days), t_f)
            out.append((t, t_next, self.u_b if on else 0.0))
            t, on = t_next, not on
        return out


@dataclass(frozen=True)
class ScenarioPreset:
    name: str
    a2: float
    a3: float
    k3_fraction: float
    S0: float = 1.0
    R0: float = 0.0
    k2: float = 0.045

    def params(self, base: ModelParams | None = None, **overrides) -> ModelParams:
        base = base or ModelParams()
        return base.with_(a2=self.a2, a3=self.a3, k2=self.k2,
                          k3=self.k3_fraction * base.k1, **overrides)

    def init(self, diet: str) -> DietInit:
        return DietInit.default(diet, S0=self.S0, R0=self.R0)


SCENARIOS = {
    "I-a": ScenarioPreset("I-a", a2=20.0, a3=1.0, k3_fraction=0.5),
    "I-b": ScenarioPreset("I-b", a2=20.0, a3=1.0, k3_fraction=0.5, S0=0.75, R0=0.25),
    "II": ScenarioPreset("II", a2=10.0, a3=1.0, k3_fraction=0.5),
    "III": ScenarioPreset("III", a2=10.0, a3=10.0, k3_fraction=0.25),
}


def get_scenario(name: str) -> ScenarioPreset:
    try:
        return SCENARIOS[name]
    except KeyError:
        raise DomainError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}") from None


def detect_treatment_start(traj_untreated: Trajectory, m1: float, eta: float,
                           fraction: float = 0.25, tol: float = 1e-6):
    """First time the burden ``S + eta*R`` reaches ``fraction/m1`` from below.

    Bisects the Hermite dense output to ``tol`` days. Returns 0 if the
    burden starts at or above the threshold and None if it is never reached.
    """
    threshold = fraction / m1
    X = traj_untreated.states
    burden = X[:, 0] + eta * X[:, 1]
    above = np.nonzero(burden >= threshold)[0]
    if above.size == 0:
        return None
    i = int(above[0])
    if i == 0:
        return float(traj_untreated.times[0])
    dX = traj_untreated.derivs
    seg = HermiteInterpolant(traj_untreated.times[i - 1:i + 1],
                             burden[i - 1:i + 1], dX[i - 1:i + 1, 0] + eta * dX[i - 1:i + 1, 1])
    lo, hi = float(traj_untreated.times[i - 1]), float(traj_untreated.times[i])
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if seg(mid) >= threshold:
            hi = mid
        else:
            lo = mid
    return hi


def _output_nodes(t0, t1, base, kinks=()):
    """Nodes on [t0, t1]: the ends, the kinks inside, and the base grid.

    Base nodes within rounding distance of an end or kink are dropped, so
    no two nodes are so close that a step between them underflows.
    """
    tol = 1e-9 * max(1.0, abs(t1))
    kinks = np.asarray(kinks, dtype=float)
    fixed = np.union1d([t0, t1], kinks[(kinks > t0 + tol) & (kinks < t1 - tol)])
    inside = base[(base > t0) & (base < t1)]
    near = np.abs(inside[:, None] - fixed[None, :]).min(axis=1) <= tol
    return np.union1d(fixed, inside[~near])


def _merge(segments):
    out = []
    for seg in segments:
        if out and not isinstance(seg[2], ControlGrid) and not isinstance(out[-1][2], ControlGrid) \
                and seg[2] == out[-1][2]:
            out[-1] = (out[-1][0], seg[1], seg[2])
        else:
            out.append(seg)
    return out


def simulate_treated(params: ModelParams, init, plan: TreatmentPlan, t_f: float = T_FINAL,
                     config: IntegratorConfig | None = None, output_step: float = OUTPUT_STEP):
    """Untreated growth until the start time, then the plan until ``t_f``.

    The output grid has spacing ``output_step`` plus the start and every
    switch time. Integration restarts at each switch. ``meta['t_tr']`` holds
    the start time (None if the threshold is never reached).
    """
    if not t_f > 0:
        raise DomainError("t_f must be > 0")
    y0 = init.extended() if isinstance(init, DietInit) else np.asarray(init, dtype=float)
    if np.any(y0 < 0):
        raise DomainError("initial state must be non-negative")
    untreated = simulate_extended(params, y0, (0.0, t_f), 0.0, config=config)
    t_tr = detect_treatment_start(untreated, params.m1, params.eta, plan.start_fraction)

    segments = [(0.0, t_tr if t_tr is not None else t_f, 0.0)]
    if t_tr is not None:
        segments += plan.segments(t_tr, t_f)
    segments = _merge([s for s in segments if s[1] > s[0]])
    n = int(round(t_f / output_step))
    base = np.linspace(0.0, t_f, n + 1)

    times, states, derivs, controls = [], [], [], []
    y = y0
    min_raw = math.inf
    n_steps = 0
    for k, (a, b, ctl) in enumerate(segments):
        if isinstance(ctl, ControlGrid):
            nodes = _output_nodes(a, b, base, ctl.times)
            control = (ctl.times, ctl.values)
            u = ctl(nodes)
        else:
            nodes = _output_nodes(a, b, base)
            control = ctl
            u = np.full(nodes.size, float(ctl))
        tr = simulate_extended(params, y, (a, b), control, output_grid=nodes, config=config)
        skip = 1 if k > 0 else 0
        times.append(tr.times[skip:])
        states.append(tr.states[skip:])
        derivs.append(tr.derivs[skip:])
        controls.append(u[skip:])
        if k > 0:
            controls[-2][-1] = u[0]  # a switch node carries the new control
        y = tr.final
        min_raw = min(min_raw, tr.min_raw)
        n_steps += tr.n_steps
    return Trajectory(np.concatenate(times), np.concatenate(states), np.concatenate(derivs),
                      np.concatenate(controls), names=EXTENDED_NAMES, min_raw=min_raw,
                      n_steps=n_steps, meta={"t_tr": t_tr, "plan": plan.kind})


@dataclass(frozen=True)
class ScenarioSummary:
    scenario: str
    diet: str
    plan: str
    t_tr: float | None
    S_tr: float
    R_tr: float
    S_final: float
    R_final: float
    E_final: float
    eradicated: bool

    @property
    def burden_final(self) -> float:
        return self.S_final + self.R_final


def summarize(traj: Trajectory, scenario: str, diet: str, plan: str) -> ScenarioSummary:
    t_tr = traj.meta.get("t_tr")
    if t_tr is None:
        at = traj.states[-1]
    else:
        at = HermiteInterpolant(traj.times, traj.states, traj.derivs)(t_tr)
    S, R, E, _ = traj.final
    return ScenarioSummary(scenario, diet, plan, t_tr, float(at[0]), float(at[1]),
                           float(S), float(R), float(E), bool(S + R < ERADICATION_LEVEL))


def run_scenario(preset: ScenarioPreset | str, diet: str, plan: TreatmentPlan,
                 t_f: float = T_FINAL, config: IntegratorConfig | None = None,
                 base: ModelParams | None = None):
    """Simulate a preset scenario for one diet; returns (trajectory, summary)."""
    if isinstance(preset, str):
        preset = get_scenario(preset)
    params = preset.params(base)
    traj = simulate_treated(params, preset.init(diet), plan, t_f, config=config)
    return traj, summarize(traj, preset.name, diet, plan.kind)


# -- CSV ----------------------------------------------------------------------

TRAJECTORY_HEADER = ("t", "S", "R", "E", "F", "u")


def write_trajectory_csv(traj: Trajectory, path) -> None:
    u = traj.controls if traj.controls is not None else np.zeros(len(traj))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_HEADER)
        for t, x, ui in zip(traj.times, traj.states, u):
            w.writerow(["%.9g" % v for v in (t, *x, ui)])


def read_trajectory_csv(path) -> Trajectory:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != TRAJECTORY_HEADER:
        raise MeasurementError("bad trajectory header", line=1)
    data = []
    for i, row in enumerate(rows[1:], start=2):
        try:
            data.append([float(v) for v in row])
        except ValueError:
            raise MeasurementError(f"non-numeric field in {row}", line=i) from None
        if len(row) != 6:
            raise MeasurementError(f"expected 6 fields, got {len(row)}", line=i)
    arr = np.array(data, dtype=float).reshape(-1, 6)
    return Trajectory(arr[:, 0], arr[:, 1:5], controls=arr[:, 5], names=EXTENDED_NAMES)
