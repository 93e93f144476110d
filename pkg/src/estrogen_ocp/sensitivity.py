"""Latin-hypercube sampling and partial rank correlation coefficients."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc, rankdata

from .errors import DomainError
from .model import EXTENDED_NAMES, DietInit, ModelParams, simulate_extended

SAMPLED = ("k1", "a1", "m1", "mu", "r", "alpha", "k2", "m2", "k3", "c", "l", "a3", "p")
DAYS = (5.0, 15.0, 25.0)
N_SAMPLES = 1000
DEFAULT_SEED = 7
MAX_FAILURE_FRACTION = 0.05


def study_baseline() -> ModelParams:
    """Extended model with both Hill thresholds at 5 pg/g and p = 0.5."""
    return ModelParams(a2=5.0, a3=5.0, p=0.5)


@dataclass(frozen=True)
class LhsDesign:
    names: tuple
    ranges: np.ndarray  # (n_params, 2)
    samples: np.ndarray  # (n_samples, n_params)
    seed: int | None


def lhs_sample(ranges, n: int, seed=None, names=None) -> LhsDesign:
    """Latin-hypercube design: each column uses each of n equal strata once.

    ``ranges`` is a sequence of ``(lo, hi)`` pairs or a mapping name -> pair.
    """
    if isinstance(ranges, dict):
        names = tuple(ranges)
        ranges = list(ranges.values())
    box = np.array(ranges, dtype=float).reshape(-1, 2)
    names = tuple(names) if names is not None else tuple(f"x{i}" for i in range(len(box)))
    if n < 2:
        raise DomainError("need n >= 2 samples")
    bad = [nm for nm, (lo, hi) in zip(names, box) if not lo < hi]
    if bad:
        raise DomainError(f"degenerate ranges (lo >= hi) for {bad}")
    unit = qmc.LatinHypercube(d=len(box), seed=seed).random(n)
    return LhsDesign(names, box, qmc.scale(unit, box[:, 0], box[:, 1]), seed)


def _partial_residuals(ranks, target, others):
    """Residual of the target column after least squares on the others.

    Returns None when the regressors are rank deficient.
    """
    A = np.column_stack([np.ones(len(target))] + ([others] if others.size else []))
    if np.linalg.matrix_rank(A) < A.shape[1]:
        return None
    coef, *_ = np.linalg.lstsq(A, target, rcond=None)
    return target - A @ coef


def prcc(samples, outputs, which: int) -> float:
    """Partial rank correlation of parameter column ``which`` with ``outputs``.

    Returns NaN (undefined) for a constant output, a constant parameter or
    a rank-deficient design.
    """
    X = np.asarray(samples, dtype=float)
    y = np.asarray(outputs, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.shape[0] or X.shape[0] < 3:
        raise DomainError("need a 2-D design with >= 3 rows matching the outputs")
    if not np.all(np.isfinite(y)):
        raise DomainError("outputs must be finite")
    R = np.column_stack([rankdata(c) for c in X.T])
    ry = rankdata(y)
    others = np.delete(R, which, axis=1)
    res_x = _partial_residuals(R, R[:, which], others)
    res_y = _partial_residuals(R, ry, others)
    if res_x is None or res_y is None:
        return math.nan
    sx, sy = np.linalg.norm(res_x), np.linalg.norm(res_y)
    scale = np.sqrt(len(y)) * 1e-12 * len(y)
    if sx <= scale or sy <= scale:
        return math.nan
    return float(np.clip(res_x @ res_y / (sx * sy), -1.0, 1.0))


@dataclass
class PrccReport:
    names: tuple
    outputs: tuple
    days: tuple
    values: np.ndarray  # (n_params, n_outputs, n_days); NaN marks undefined
    n_samples: int
    n_effective: int
    seed: int | None
    diet: str = ""
    baseline: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)

    def value(self, param, output, day) -> float:
        return float(self.values[self.names.index(param), self.outputs.index(output),
                                 self.days.index(day)])

    def rows(self):
        for i, p in enumerate(self.names):
            for j, o in enumerate(self.outputs):
                for k, d in enumerate(self.days):
                    yield p, o, d, float(self.values[i, j, k])


PRCC_HEADER = ("param", "output", "day", "prcc", "n_effective")


def write_prcc_csv(report: PrccReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PRCC_HEADER)
        for p, o, d, v in report.rows():
            w.writerow((p, o, "%g" % d, "nan" if math.isnan(v) else "%.6f" % v,
                        report.n_effective))


def read_prcc_csv(path) -> list[tuple]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        if tuple(next(reader)) != PRCC_HEADER:
            raise DomainError(f"{path}: bad PRCC header")
        return [(p, o, float(d), float(v), int(n)) for p, o, d, v, n in reader]


def study_ranges(baseline: ModelParams, names=SAMPLED):
    """Half to twice each baseline value; p is capped at 1."""
    out = {}
    for name in names:
        b = getattr(baseline, name)
        lo, hi = 0.5 * b, 2.0 * b
        if name == "p":
            hi = min(hi, 1.0)
        out[name] = (lo, hi)
    return out


def _row_params(baseline, names, row):
    values = dict(zip(names, row))
    if "l" in values:
        values["l"] = float(np.round(values["l"]))
    return baseline.with_(**values)


def _observe(params, y0, days):
    grid = np.union1d([0.0], days)
    tr = simulate_extended(params, y0, (0.0, float(grid[-1])), 1.0 - params.p, output_grid=grid)
    return tr.states[np.searchsorted(tr.times, days)]  # (n_days, 4)


def run_prcc_study(baseline: ModelParams | None = None, diet: str = "CD", days=DAYS,
                   n: int = N_SAMPLES, seed=DEFAULT_SEED, names=SAMPLED,
                   threads: int = 1) -> PrccReport:
    """Sample parameters, simulate the constant-treatment model once per row
    from t = 0, and compute PRCC for every (parameter, output, day)."""
    baseline = baseline or study_baseline()
    days = tuple(float(d) for d in days)
    if min(days) <= 0:
        raise DomainError("observation days must be > 0")
    design = lhs_sample(study_ranges(baseline, names), n, seed)
    y0 = DietInit.default(diet).extended()
    outputs = np.full((n, len(days), 4), np.nan)
    failures = []

    def job(i):
        try:
            return i, _observe(_row_params(baseline, names, design.samples[i]), y0, days), None
        except (ArithmeticError, ValueError, RuntimeError) as exc:
            return i, None, f"{type(exc).__name__}: {exc}"

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(job, range(n)))
    else:
        results = [job(i) for i in range(n)]
    for i, obs, err in results:
        if err is None:
            outputs[i] = obs
        else:
            failures.append((i, err))
    if len(failures) > MAX_FAILURE_FRACTION * n:
        raise RuntimeError(f"{len(failures)} of {n} simulations failed; first: {failures[0]}")

    keep = np.array([i for i in range(n) if not np.isnan(outputs[i]).any()], dtype=int)
    X = design.samples[keep].copy()
    if "l" in names:
        li = names.index("l")
        X[:, li] = np.round(X[:, li])
    values = np.full((len(names), 4, len(days)), np.nan)
    for j in range(4):
        for k in range(len(days)):
            y = outputs[keep, k, j]
            for i in range(len(names)):
                values[i, j, k] = prcc(X, y, i)
    return PrccReport(tuple(names), EXTENDED_NAMES, days, values, n, int(keep.size), seed,
                      diet, baseline.as_dict(), failures)
