"""Two-step calibration of the basic model against tumor and fat volumes.

Step 1 fits ``(k1, a1, r_CD, r_HFD)`` to the tumor volumes alone, holding
estrogen at its steady state ``E = r_hat/mu`` so that each diet's tumor
grows logistically at rate ``k1*E/(a1+E)``. Step 2 fixes those values and
fits ``(r, alpha)`` to tumor and fat volumes with the full basic model,
started at ``E0 = r_hat/mu`` and ``F0 = r_hat/r``.

Note that step 1 only sees the two growth rates, so the four step-1
parameters are not separately identifiable from tumor data; the fit
returns one point of a solution manifold.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.stats import qmc

from .errors import CalibrationError, DomainError, MeasurementError
from .model import DIETS, DietInit, ModelParams, simulate_basic

DEFAULT_SEED = 20240611
N_STARTS = 10
MEASUREMENT_HEADER = ("diet", "day", "quantity", "value", "spread")
QUANTITIES = ("tumor", "fat")
TUMOR_DAYS = (10.0, 13.0, 15.0)
FAT_DAYS = (15.0,)


@dataclass(frozen=True)
class Measurement:
    diet: str
    day: float
    quantity: str
    value: float
    spread: float | None = None

    def __post_init__(self):
        problems = []
        if self.diet not in DIETS:
            problems.append(f"diet {self.diet!r} not in {DIETS}")
        if self.quantity not in QUANTITIES:
            problems.append(f"quantity {self.quantity!r} not in {QUANTITIES}")
        if not (math.isfinite(self.day) and self.day >= 0):
            problems.append(f"day={self.day} must be >= 0")
        if not (math.isfinite(self.value) and self.value >= 0):
            problems.append(f"value={self.value} must be >= 0")
        if self.spread is not None and not (math.isfinite(self.spread) and self.spread >= 0):
            problems.append(f"spread={self.spread} must be >= 0")
        if problems:
            raise MeasurementError("; ".join(problems))


def load_measurements(path) -> list[Measurement]:
    """Read a measurement CSV. Errors name the offending line."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != MEASUREMENT_HEADER:
            raise MeasurementError(f"header must be {','.join(MEASUREMENT_HEADER)}", line=1)
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 5:
                raise MeasurementError(f"expected 5 fields, got {len(row)}", line=line)
            diet, day, quantity, value, spread = (c.strip() for c in row)
            try:
                day_f, value_f = float(day), float(value)
                spread_f = float(spread) if spread else None
            except ValueError:
                raise MeasurementError(f"non-numeric field in {row}", line=line) from None
            try:
                out.append(Measurement(diet, day_f, quantity, value_f, spread_f))
            except MeasurementError as exc:
                raise MeasurementError(f"invalid row: {exc}", line=line) from None
    return out


def write_measurements(measurements, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MEASUREMENT_HEADER)
        for m in measurements:
            w.writerow([m.diet, "%g" % m.day, m.quantity, "%.9g" % m.value,
                        "" if m.spread is None else "%.9g" % m.spread])


def steady_state_estrogen(r_hat: float, mu: float) -> float:
    """Estrogen level ``r_hat/mu`` at which production balances washout."""
    if not mu > 0:
        raise DomainError(f"mu={mu} must be > 0")
    return r_hat / mu


# -- bounds and search --------------------------------------------------------

@dataclass(frozen=True)
class Step1Bounds:
    k1: tuple = (0.01, 5.0)
    a1: tuple = (1.0, 1000.0)
    estrogen: tuple = (150.0, 1500.0)  # steady-state E range, r_hat = mu*E

    def box(self, mu):
        return np.array([self.k1, self.a1,
                         (mu * self.estrogen[0], mu * self.estrogen[1]),
                         (mu * self.estrogen[0], mu * self.estrogen[1])])


@dataclass(frozen=True)
class Step2Bounds:
    r: tuple = (0.1, 100.0)
    alpha: tuple = (1e-7, 1e-2)

    def box(self):
        return np.array([self.r, self.alpha])


def _multistart(loss, box, n_starts, seed, names, scale=1.0):
    """Bounded Nelder-Mead from Latin-hypercube starts in log coordinates.

    Every bound here spans at least a decade, so the search runs on the log
    of each parameter scaled to [0, 1]. ``scale`` (the data's sum of
    squares) sets the loss tolerance. Returns (x, loss, all runs).
    """
    lo, hi = np.log(box[:, 0]), np.log(box[:, 1])

    def to_x(z):
        return np.exp(lo + np.clip(z, 0.0, 1.0) * (hi - lo))

    def f(z):
        v = loss(to_x(z))
        return v if math.isfinite(v) else 1e300

    starts = qmc.LatinHypercube(d=len(box), seed=seed).random(n_starts)
    runs = []
    for z0 in starts:
        res = minimize(f, z0, method="Nelder-Mead", bounds=[(0.0, 1.0)] * len(box),
                       options=dict(xatol=1e-8, fatol=1e-14 * scale, maxiter=4000 * len(box),
                                    maxfev=4000 * len(box), adaptive=True))
        runs.append((float(res.fun), to_x(res.x), bool(res.success)))
    best = min(range(len(runs)), key=lambda i: (runs[i][0], i))
    fun, x, _ = runs[best]
    if not any(ok for _, _, ok in runs):
        raise CalibrationError("no multistart run converged",
                               best=dict(zip(names, x.tolist()), residual=fun))
    return x, fun, runs


def _at_bounds(x, box, names, rel=1e-6):
    span = np.log(box[:, 1]) - np.log(box[:, 0])
    z = (np.log(x) - np.log(box[:, 0])) / span
    return [n for n, zi in zip(names, z) if zi < rel or zi > 1 - rel]


# -- step 1 -------------------------------------------------------------------

def logistic_volume(t, g, m1, T0=1.0):
    """Closed-form solution of ``T' = g T (1 - m1 T)`` from ``T(0) = T0``."""
    t = np.asarray(t, dtype=float)
    return 1.0 / (m1 + (1.0 / T0 - m1) * np.exp(-g * t))


@dataclass
class Step1Result:
    k1: float
    a1: float
    r_CD: float
    r_HFD: float
    residual: float
    at_bounds: list = field(default_factory=list)

    def r_hat(self, diet):
        return self.r_CD if diet == "CD" else self.r_HFD


def _split(data, quantity):
    out = {d: ([], []) for d in DIETS}
    for m in data:
        if m.quantity == quantity:
            out[m.diet][0].append(m.day)
            out[m.diet][1].append(m.value)
    return {d: (np.array(t), np.array(v)) for d, (t, v) in out.items()}


def fit_step1(tumor_data, m1: float = 1 / 2000, mu: float = 5.94,
              bounds: Step1Bounds | None = None, n_starts: int = N_STARTS,
              seed: int = DEFAULT_SEED) -> Step1Result:
    """Fit ``(k1, a1, r_CD, r_HFD)`` to tumor volumes with estrogen at steady state."""
    bounds = bounds or Step1Bounds()
    tumor = _split(tumor_data, "tumor")
    short = [d for d in DIETS if len(tumor[d][0]) < 3]
    if short:
        raise DomainError(f"need at least 3 tumor points per diet; short: {short}")
    box = bounds.box(mu)

    def loss(x):
        k1, a1, r_cd, r_hfd = x
        total = 0.0
        for diet, r_hat in (("CD", r_cd), ("HFD", r_hfd)):
            E = steady_state_estrogen(r_hat, mu)
            t, v = tumor[diet]
            total += float(np.sum((logistic_volume(t, k1 * E / (a1 + E), m1) - v) ** 2))
        return total

    names = ("k1", "a1", "r_CD", "r_HFD")
    scale = sum(float(np.sum(v ** 2)) for _, v in tumor.values())
    x, fun, _ = _multistart(loss, box, n_starts, seed, names, scale)
    return Step1Result(*map(float, x), residual=fun, at_bounds=_at_bounds(x, box, names))


# -- step 2 -------------------------------------------------------------------

@dataclass
class Step2Result:
    r: float
    alpha: float
    residual: float
    at_bounds: list = field(default_factory=list)


def _diet_params(step1, m1, mu, r, alpha):
    return ModelParams(k1=step1.k1, a1=step1.a1, m1=m1, mu=mu, r=r, alpha=alpha)


def model_observables(params: ModelParams, r_hat: float, days) -> np.ndarray:
    """Basic-model (T, E, F) at ``days`` from ``E0 = r_hat/mu``, ``F0 = r_hat/r``."""
    days = np.asarray(days, dtype=float)
    init = DietInit("CD", E0=r_hat / params.mu, F0=r_hat / params.r)
    grid = np.union1d([0.0], days)
    tr = simulate_basic(params, init, float(grid[-1]), output_grid=grid)
    return tr.states[np.searchsorted(tr.times, days)]


def fit_step2(all_data, step1: Step1Result, m1: float = 1 / 2000, mu: float = 5.94,
              bounds: Step2Bounds | None = None, n_starts: int = N_STARTS,
              seed: int = DEFAULT_SEED) -> Step2Result:
    """Fit ``(r, alpha)`` to tumor and fat volumes with the step-1 values fixed."""
    bounds = bounds or Step2Bounds()
    tumor, fat = _split(all_data, "tumor"), _split(all_data, "fat")
    missing = [d for d in DIETS if len(fat[d][0]) == 0]
    if missing:
        raise DomainError(f"fat data missing for {missing}")
    box = bounds.box()

    def loss(x):
        r, alpha = x
        prm = _diet_params(step1, m1, mu, r, alpha)
        total = 0.0
        for diet in DIETS:
            tt, tv = tumor[diet]
            ft, fv = fat[diet]
            days = np.union1d(tt, ft)
            obs = model_observables(prm, step1.r_hat(diet), days)
            T = obs[np.searchsorted(days, tt), 0]
            F = obs[np.searchsorted(days, ft), 2]
            total += float(np.sum((T - tv) ** 2) + np.sum((F - fv) ** 2))
        return total

    names = ("r", "alpha")
    scale = sum(float(np.sum(v ** 2)) for part in (tumor, fat) for _, v in part.values())
    x, fun, _ = _multistart(loss, box, n_starts, seed + 1, names, scale)
    return Step2Result(float(x[0]), float(x[1]), fun, _at_bounds(x, box, names))


@dataclass
class CalibrationResult:
    step1: Step1Result
    step2: Step2Result
    mu: float

    @property
    def derived(self) -> dict:
        s1, r = self.step1, self.step2.r
        return {"E0_CD": s1.r_CD / self.mu, "E0_HFD": s1.r_HFD / self.mu,
                "F0_CD": s1.r_CD / r, "F0_HFD": s1.r_HFD / r}

    def as_rows(self):
        s1, s2 = self.step1, self.step2
        rows = [("k1", s1.k1), ("a1", s1.a1), ("r_CD", s1.r_CD), ("r_HFD", s1.r_HFD),
                ("step1_residual", s1.residual), ("r", s2.r), ("alpha", s2.alpha),
                ("step2_residual", s2.residual)]
        return rows + sorted(self.derived.items())


def calibrate(data, m1: float = 1 / 2000, mu: float = 5.94, seed: int = DEFAULT_SEED,
              n_starts: int = N_STARTS) -> CalibrationResult:
    s1 = fit_step1(data, m1, mu, n_starts=n_starts, seed=seed)
    s2 = fit_step2(data, s1, m1, mu, n_starts=n_starts, seed=seed)
    return CalibrationResult(s1, s2, mu)


# -- synthetic data -----------------------------------------------------------

def synthetic_measurements(params: ModelParams | None = None, tumor_days=TUMOR_DAYS,
                           fat_days=FAT_DAYS) -> list[Measurement]:
    """Noiseless measurements from the basic model at the default diet estrogen.

    Each diet starts at its default E0 with fat at the matching steady state
    ``F0 = mu*E0/r``.
    """
    params = params or ModelParams()
    out = []
    for diet in DIETS:
        r_hat = params.mu * DietInit.default(diet).E0
        days = np.union1d(tumor_days, fat_days)
        obs = model_observables(params, r_hat, days)
        for d, (T, _, F) in zip(days, obs):
            if d in tumor_days:
                out.append(Measurement(diet, float(d), "tumor", float(T)))
            if d in fat_days:
                out.append(Measurement(diet, float(d), "fat", float(F)))
    return out
