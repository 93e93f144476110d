"""Discretized control functions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError

DEFAULT_BOUNDS = (0.0, 0.99)


@dataclass(frozen=True)
class ControlGrid:
    """Control values on a time grid, read as piecewise linear between nodes."""

    times: np.ndarray
    values: np.ndarray
    bounds: tuple[float, float] = DEFAULT_BOUNDS

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)
        ua, ub = self.bounds
        if not 0 <= ua <= ub <= 1:
            raise DomainError(f"control bounds {self.bounds} must satisfy 0 <= u_a <= u_b <= 1")
        if t.ndim != 1 or t.shape != v.shape or t.size < 2:
            raise DomainError("control grid needs matching 1-D times and values, at least 2 nodes")
        if np.any(np.diff(t) <= 0):
            raise DomainError("control grid times must be strictly increasing")
        if not np.all(np.isfinite(v)) or v.min() < ua or v.max() > ub:
            raise DomainError(f"control values outside bounds {self.bounds}")

    @classmethod
    def uniform(cls, t0: float, t1: float, n: int, value: float = 0.0,
                bounds=DEFAULT_BOUNDS) -> "ControlGrid":
        if n < 2 or not t1 > t0:
            raise DomainError("uniform grid needs n >= 2 and t1 > t0")
        return cls(np.linspace(t0, t1, n), np.full(n, float(value)), tuple(bounds))

    def __call__(self, t):
        return np.interp(t, self.times, self.values)

    def with_values(self, values) -> "ControlGrid":
        return ControlGrid(self.times, np.asarray(values, dtype=float), self.bounds)

    @property
    def span(self) -> tuple[float, float]:
        return float(self.times[0]), float(self.times[-1])
