"""Tumor / estrogen / fat dynamics.

Two models share one parameter set:

* the basic model with state (T, E, F): estrogen-driven logistic tumor
  growth, fat-produced estrogen with washout, tumor consumption of fat;
* the extended model with state (S, R, E, F): estrogen-sensitive and
  resistant subpopulations, Hill-type death and adaptation of sensitive
  cells at low estrogen, logistic fat growth, and an aromatase-inhibitor
  control ``u`` that scales estrogen production by ``1 - u``.

Constant treatment with factor ``p`` is the control ``u = 1 - p``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, fields, replace
from typing import NamedTuple

import numpy as np

from .errors import DomainError, EvaluationError

DIETS = ("CD", "HFD")


@dataclass(frozen=True)
class ModelParams:
    """Rate constants and thresholds. Defaults are the calibrated values,
    with the Scenario I thresholds (a2=20, a3=1, k3=k1/2) and no treatment."""

    k1: float = 0.586967       # tumor growth rate, 1/day
    a1: float = 59.0927        # half-maximum estrogen threshold, pg/g
    m1: float = 1 / 2000       # inverse tumor carrying capacity, 1/mm^3
    mu: float = 5.94           # estrogen washout, 1/day
    r: float = 20.8391         # estrogen production, pg/g/mm^3/day
    alpha: float = 2.21427e-5  # fat consumption, 1/day/mm^3
    k2: float = 0.045          # fat growth, 1/day
    m2: float = 0.002711       # inverse fat carrying capacity, 1/mm^3
    k3: float = 0.586967 / 2   # resistant growth rate, 1/day
    c: float = 1.0             # maximum death rate, 1/day
    l: float = 10.0            # Hill coefficient
    a2: float = 20.0           # death threshold, pg/g
    a3: float = 1.0            # adaptation threshold, pg/g
    eta: float = 1.0           # competition intensity
    p: float = 1.0             # constant treatment factor

    def __post_init__(self):
        problems = self.violations()
        if problems:
            raise DomainError("invalid parameters: " + "; ".join(problems))
        if self.a3 == 0 or self.a2 == 0:
            warnings.warn("zero Hill threshold: term is c at E=0 and 0 for E>0",
                          RuntimeWarning, stacklevel=3)

    def violations(self) -> list[str]:
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            if not math.isfinite(v):
                out.append(f"{f.name} is not finite")
            elif v < 0:
                out.append(f"{f.name}={v} < 0")
        if not 0 < self.p <= 1:
            out.append(f"p={self.p} outside (0, 1]")
        if self.l < 1:
            out.append(f"l={self.l} < 1")
        for name in ("m1", "m2", "mu"):
            if not getattr(self, name) > 0:
                out.append(f"{name} must be > 0")
        return out

    def with_(self, **changes) -> "ModelParams":
        return replace(self, **changes)

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class DietInit:
    """Initial condition for one diet. T0 is used by the basic model,
    (S0, R0) by the extended one."""

    diet: str
    E0: float
    F0: float
    T0: float = 1.0
    S0: float = 1.0
    R0: float = 0.0

    def __post_init__(self):
        if self.diet not in DIETS:
            raise DomainError(f"unknown diet {self.diet!r}")
        for name in ("E0", "F0", "T0", "S0", "R0"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise DomainError(f"{name}={v} must be finite and >= 0")

    @classmethod
    def default(cls, diet: str, **overrides) -> "DietInit":
        base = {"CD": dict(E0=175.143, F0=49.923),
                "HFD": dict(E0=1293.918, F0=368.820)}
        if diet not in base:
            raise DomainError(f"unknown diet {diet!r}")
        return cls(diet=diet, **{**base[diet], **overrides})

    @classmethod
    def steady_state(cls, diet: str, E0: float, params: "ModelParams", **overrides) -> "DietInit":
        """Initial condition with fat at ``mu*E0/r``, so that dE/dt = 0 at t=0."""
        if not params.r > 0:
            raise DomainError("steady state needs r > 0")
        return cls(diet=diet, E0=E0, F0=params.mu * E0 / params.r, **overrides)

    def basic(self) -> np.ndarray:
        return np.array([self.T0, self.E0, self.F0])

    def extended(self) -> np.ndarray:
        return np.array([self.S0, self.R0, self.E0, self.F0])


class StateBasic(NamedTuple):
    T: float
    E: float
    F: float


class StateExtended(NamedTuple):
    S: float
    R: float
    E: float
    F: float


BASIC_NAMES = StateBasic._fields
EXTENDED_NAMES = StateExtended._fields


@dataclass(frozen=True)
class AdipocyteGeometry:
    n: float  # adipocytes per mm^2
    d: float  # adipocyte diameter, mm
    V: float  # tissue cube volume, mm^3


# -- Hill terms ---------------------------------------------------------------

def hill(E, a, c, l):
    """``c * a**l / (a**l + E**l)`` evaluated as ``c / (1 + (E/a)**l)``.

    A zero threshold ``a`` gives ``c`` at E=0 and 0 elsewhere.
    """
    if a == 0:
        return np.where(np.asarray(E) > 0, 0.0, c)
    with np.errstate(over="ignore"):
        return c / (1.0 + np.power(np.divide(E, a), l))


def hill_dE(E, a, c, l):
    """Derivative of :func:`hill` with respect to E.

    Uses ``-c*l*q/(E*(1+q)**2)`` with ``q=(E/a)**l``, which stays finite for
    large E; at E=0 the limit is 0 for l>1 and ``-c/a`` for l=1.
    """
    E = np.asarray(E, dtype=float)
    if a == 0:
        return np.zeros_like(E)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        q = np.power(E / a, l)
        w = 1.0 / (1.0 + q)
        inner = np.where(np.isfinite(q), q * w * w, 0.0)
        d = -c * l * inner / E
    at_zero = -c / a if l == 1 else 0.0
    return np.where(E > 0, d, at_zero)


# -- right-hand sides ---------------------------------------------------------

def _check_finite(values, names):
    for name, v in zip(names, values):
        if not np.all(np.isfinite(v)):
            raise EvaluationError(f"non-finite {name}: {v}")


def basic_field(y, prm: ModelParams):
    """Vector field of the basic model on an array ``y = (T, E, F)``."""
    T, E, F = y[0], y[1], y[2]
    growth = prm.k1 * E / (prm.a1 + E)
    return np.array([
        growth * T * (1 - prm.m1 * T),
        prm.r * F - prm.mu * E,
        -prm.alpha * T * F,
    ])


def extended_field(y, prm: ModelParams, u=0.0):
    """Vector field of the extended model on ``y = (S, R, E, F)``.

    ``y`` may carry trailing batch axes; ``u`` broadcasts against them.
    """
    S, R, E, F = y[0], y[1], y[2], y[3]
    growth = prm.k1 * E / (prm.a1 + E)
    crowd = 1 - prm.m1 * (S + prm.eta * R)
    death = hill(E, prm.a2, prm.c, prm.l)
    adapt = hill(E, prm.a3, prm.c, prm.l)
    return np.array([
        growth * S * crowd - death * S - adapt * S,
        prm.k3 * R * crowd + adapt * S,
        (1 - u) * prm.r * F - prm.mu * E,
        prm.k2 * F * (1 - prm.m2 * F) - prm.alpha * (S + R) * F,
    ])


def rhs_basic(state, params: ModelParams) -> StateBasic:
    """Time derivatives (dT/dt, dE/dt, dF/dt) of the basic model."""
    state = StateBasic(*(float(v) for v in state))
    _check_finite(state, BASIC_NAMES)
    return StateBasic(*(float(v) for v in basic_field(np.array(state), params)))


def rhs_extended(state, params: ModelParams, u: float = 0.0) -> StateExtended:
    """Time derivatives of the extended model under control ``u`` in [0, 1]."""
    state = StateExtended(*(float(v) for v in state))
    _check_finite(state, EXTENDED_NAMES)
    _check_finite([u], ["u"])
    if not 0 <= u <= 1:
        raise EvaluationError(f"control u={u} outside [0, 1]")
    return StateExtended(*(float(v) for v in extended_field(np.array(state), params, u)))


def constant_treatment_control(p: float) -> float:
    """Control value equivalent to a constant treatment factor ``p``."""
    if not 0 < p <= 1:
        raise DomainError(f"p={p} outside (0, 1]")
    return 1.0 - p


# -- auxiliary formulas -------------------------------------------------------

def fat_volume_estimate(geom: AdipocyteGeometry) -> float:
    """Adipocyte amount in a tissue cube of volume V: ``n * V**(2/3) / d``.

    The cube has ``V**(1/3)/d`` layers of cells of diameter d, each layer
    holding ``V**(1/3) * n`` cells. Dimensionally the result is a cell
    count, although it is used as the fat amount.
    """
    if not geom.d > 0:
        raise DomainError(f"adipocyte diameter d={geom.d} must be > 0")
    if geom.n < 0 or geom.V < 0:
        raise DomainError("n and V must be >= 0")
    return geom.n * geom.V ** (2 / 3) / geom.d


def carrying_capacity_check(params: ModelParams) -> tuple[bool, float]:
    """Whether the fat growth rate satisfies ``k2 >= alpha/(m1*eta)``.

    Returns the verdict and the margin ``k2 - alpha/(m1*eta)``.
    """
    if params.alpha == 0:
        return True, params.k2
    if params.eta == 0:
        return False, -math.inf
    margin = params.k2 - params.alpha / (params.m1 * params.eta)
    return margin >= 0, margin


# -- plain simulations --------------------------------------------------------

def simulate_basic(params: ModelParams, init: DietInit, t_f: float,
                   output_grid=None, config=None, t0: float = 0.0):
    """Untreated basic model from ``t0`` to ``t_f``."""
    from . import kernels
    from .integrate import integrate

    return integrate(kernels.BASIC_KERNEL, init.basic(), (t0, t_f), config=config,
                     output_grid=output_grid, clamp=True, names=BASIC_NAMES,
                     args=kernels.make_args(kernels.pack(params)))


def simulate_extended(params: ModelParams, y0, t_span, control=0.0,
                      output_grid=None, config=None):
    """Extended model from state ``y0`` over ``t_span``.

    ``control`` is a constant, a ``(times, values)`` pair read as piecewise
    linear, or a callable ``u(t)``. Kinks of a non-constant control should
    be listed in ``output_grid`` so steps never straddle them.
    """
    from . import kernels
    from .integrate import integrate

    if callable(control):
        def f(t, y):
            return extended_field(y, params, control(t))
        return integrate(f, y0, t_span, config=config, output_grid=output_grid,
                         clamp=True, names=EXTENDED_NAMES)
    args = kernels.extended_args(params, control, t_span[0])
    if np.any(args[2] < 0) or np.any(args[2] > 1):
        raise DomainError("control values outside [0, 1]")
    return integrate(kernels.EXTENDED_KERNEL, y0, t_span, config=config,
                     output_grid=output_grid, clamp=True, names=EXTENDED_NAMES,
                     args=args)
