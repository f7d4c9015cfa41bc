"""Fixed-step RK4 integration on a shared uniform grid.

Forward state, tangent and adjoint sweeps all run on one grid so that the
discrete integration-by-parts identities hold to quadrature order without
interpolation noise.  No adaptivity by design.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BlowupError, GridMismatchError, TimeDomainError, ValidationError

_BIG = 1e100  # magnitude treated as blow-up (also catches NaN via comparison)


@dataclass(frozen=True)
class Grid:
    """Uniform time grid t0 < T with M steps of size h = (T - t0)/M."""

    t0: float
    T: float
    M: int

    def __post_init__(self):
        if self.M < 1:
            raise ValidationError("grid.M must be >= 1")
        if not self.T > self.t0:
            raise ValidationError("grid.T must exceed grid.t0")

    @property
    def h(self) -> float:
        return (self.T - self.t0) / self.M

    def points(self) -> np.ndarray:
        return np.linspace(self.t0, self.T, self.M + 1)

    def half_points(self) -> np.ndarray:
        """All stage times: grid points plus interval midpoints (2M+1 values)."""
        return np.linspace(self.t0, self.T, 2 * self.M + 1)


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


class _GridSeries:
    """Shared behaviour for grid-aligned sample sequences."""

    grid: Grid
    states: np.ndarray

    def _check(self):
        if self.states.shape[0] != self.grid.M + 1:
            raise ValidationError("states length must be grid.M + 1")

    def sample(self, t: float) -> np.ndarray:
        """Linear interpolation between bracketing samples; exact at grid points."""
        g = self.grid
        if not (g.t0 - 1e-12 * (g.T - g.t0) <= t <= g.T + 1e-12 * (g.T - g.t0)):
            raise TimeDomainError(f"t={t} outside [{g.t0}, {g.T}]")
        s = min(max((t - g.t0) / g.h, 0.0), float(g.M))
        k = min(int(s), g.M - 1)
        w = s - k
        if w == 0.0:
            return self.states[k].copy()
        return (1.0 - w) * self.states[k] + w * self.states[k + 1]

    @property
    def initial(self) -> np.ndarray:
        return self.states[0].copy()

    @property
    def final(self) -> np.ndarray:
        return self.states[-1].copy()

    def _col(self, j: int) -> np.ndarray:
        return self.states[:, j]


@dataclass(frozen=True, eq=False)
class Trajectory(_GridSeries):
    """States sampled on a grid; columns are (S, A, I, L, R) for the model."""

    grid: Grid
    states: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "states", _readonly(self.states))
        self._check()

    S = property(lambda self: self._col(0))
    A = property(lambda self: self._col(1))
    I = property(lambda self: self._col(2))
    L = property(lambda self: self._col(3))
    R = property(lambda self: self._col(4))


def same_grid(*series) -> Grid:
    g = series[0].grid
    for s in series[1:]:
        if s.grid != g:
            raise GridMismatchError(f"grids differ: {s.grid} vs {g}")
    return g


def trapezoid(y, h: float) -> float:
    """Composite trapezoid rule for samples y on a uniform grid of spacing h."""
    y = np.asarray(y, dtype=float)
    return float(h * (y.sum() - 0.5 * (y[0] + y[-1])))


def _check_finite(x: np.ndarray, step: int):
    tot = float(np.sum(x))
    if not (-_BIG < tot < _BIG):
        raise BlowupError(step)


def integrate_forward(f, x0, grid: Grid) -> Trajectory:
    """Classical RK4 for x' = f(t, x) from x0 at grid.t0; M+1 samples.

    The first sample equals x0 exactly.  Raises BlowupError with the
    offending step index if a non-finite value appears.
    """
    x = np.asarray(x0, dtype=float).copy()
    out = np.empty((grid.M + 1, x.size))
    out[0] = x
    h = grid.h
    h2 = 0.5 * h
    for k in range(grid.M):
        t = grid.t0 + k * h
        k1 = f(t, x)
        k2 = f(t + h2, x + h2 * k1)
        k3 = f(t + h2, x + h2 * k2)
        k4 = f(t + h, x + h * k3)
        x = x + (h / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)
        _check_finite(x, k + 1)
        out[k + 1] = x
    return Trajectory(grid, out)


def integrate_backward(f, xT, grid: Grid) -> Trajectory:
    """RK4 for x' = f(t, x) integrated from x(T) = xT down to t0.

    Equivalent to forward RK4 in reversed time s = T - t.  The result is
    indexed on the same increasing grid as forward trajectories, and the
    last sample equals xT exactly.
    """
    x = np.asarray(xT, dtype=float).copy()
    out = np.empty((grid.M + 1, x.size))
    out[grid.M] = x
    h = grid.h
    h2 = 0.5 * h
    for m in range(grid.M, 0, -1):
        t = grid.t0 + m * h
        k1 = -f(t, x)
        k2 = -f(t - h2, x + h2 * k1)
        k3 = -f(t - h2, x + h2 * k2)
        k4 = -f(t - h, x + h * k3)
        x = x + (h / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)
        _check_finite(x, grid.M - m + 1)
        out[m - 1] = x
    return Trajectory(grid, out)


def sample(tr, t: float) -> np.ndarray:
    """Free-function form of Trajectory.sample."""
    return tr.sample(t)


def half_samples(values: np.ndarray) -> np.ndarray:
    """Expand grid samples (M+1,) to stage samples (2M+1,) by midpoint averaging."""
    values = np.asarray(values, dtype=float)
    out = np.empty(2 * values.size - 1)
    out[0::2] = values
    out[1::2] = 0.5 * (values[:-1] + values[1:])
    return out
