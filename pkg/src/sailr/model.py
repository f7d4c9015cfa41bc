"""Five-compartment epidemic model (S, A, I, L, R) with time-varying rates.

Compartments: susceptible S, undetected asymptomatic infected A, undetected
symptomatic infected I, confirmed-and-isolated L, recovered R, all expressed
as fractions of a fixed total population N.  Transmission rates beta_I and
beta_A, and the immunity-loss rate xi, may vary in time; all other rates are
constants.  The flow conserves S + A + I + L + R exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import BlowupError, TimeDomainError, ValidationError
from .integrate import Grid, Trajectory

#: numerical slack for nonnegativity checks on integrated trajectories
TOL_NEG = 1e-10


@dataclass(frozen=True, eq=False)
class CoefficientTable:
    """Piecewise-linear nonnegative coefficient over strictly increasing knots.

    A single-knot table represents a constant coefficient valid for every t;
    multi-knot tables are only defined on [knots[0], knots[-1]].
    """

    knots: np.ndarray
    values: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, CoefficientTable):
            return NotImplemented
        return (self.knots.shape == other.knots.shape
                and bool(np.all(self.knots == other.knots))
                and bool(np.all(self.values == other.values)))

    def __hash__(self):
        return hash((self.knots.tobytes(), self.values.tobytes()))

    def __post_init__(self):
        knots = np.atleast_1d(np.asarray(self.knots, dtype=float))
        values = np.atleast_1d(np.asarray(self.values, dtype=float))
        errs = []
        if knots.size != values.size or knots.size < 1:
            errs.append("coefficient table needs len(values) == len(knots) >= 1")
        if knots.size > 1 and not np.all(np.diff(knots) > 0):
            errs.append("coefficient table knots must be strictly increasing")
        if values.size and np.min(values) < 0:
            errs.append("negative coefficient value in table")
        if errs:
            raise ValidationError(errs)
        for name, arr in (("knots", knots), ("values", values)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def constant(cls, value: float) -> "CoefficientTable":
        return cls(np.array([0.0]), np.array([float(value)]))

    @property
    def is_constant(self) -> bool:
        return self.knots.size == 1

    def covers(self, t0: float, t1: float) -> bool:
        if self.is_constant:
            return True
        return self.knots[0] <= t0 and t1 <= self.knots[-1]

    def __call__(self, t):
        """Evaluate at scalar or array t (linear between knots, exact at knots)."""
        if self.is_constant:
            v = float(self.values[0])
            t = np.asarray(t, dtype=float)
            return v if t.ndim == 0 else np.full(t.shape, v)
        t = np.asarray(t, dtype=float)
        lo, hi = self.knots[0], self.knots[-1]
        span = hi - lo
        if np.any(t < lo - 1e-12 * span) or np.any(t > hi + 1e-12 * span):
            raise TimeDomainError(f"t outside coefficient table range [{lo}, {hi}]")
        out = np.interp(t, self.knots, self.values)
        return float(out) if t.ndim == 0 else out


def eval_coefficient(table: CoefficientTable, t):
    """Free-function form of CoefficientTable.__call__."""
    return table(t)


def _as_table(c) -> CoefficientTable:
    if isinstance(c, CoefficientTable):
        return c
    return CoefficientTable.constant(float(c))


@dataclass(frozen=True)
class State:
    """Population fractions of the five compartments."""

    S: float
    A: float
    I: float
    L: float
    R: float

    def as_array(self) -> np.ndarray:
        return np.array([self.S, self.A, self.I, self.L, self.R], dtype=float)

    @classmethod
    def from_array(cls, x) -> "State":
        S, A, I, L, R = (float(v) for v in x)
        return cls(S, A, I, L, R)


def total_population(x) -> float:
    """Sum of the five compartments (conserved along exact trajectories)."""
    if isinstance(x, State):
        return x.S + x.A + x.I + x.L + x.R
    return float(np.sum(np.asarray(x, dtype=float)))


@dataclass(frozen=True)
class ModelParams:
    """All model rates.

    sigma: symptom-onset rate A -> I; mu_A, mu_I, mu_L: recovery rates;
    l_A, l_I: detection/isolation rates in [0, 1]; beta_I, beta_A:
    transmission rates by I and A; xi: immunity-loss rate R -> S.
    N is the (normalized) total population, kept explicit for bookkeeping.
    """

    sigma: float
    mu_A: float
    mu_I: float
    mu_L: float
    l_A: float
    l_I: float
    beta_I: CoefficientTable
    beta_A: CoefficientTable
    xi: CoefficientTable
    N: float = 1.0

    def __post_init__(self):
        for name in ("beta_I", "beta_A", "xi"):
            object.__setattr__(self, name, _as_table(getattr(self, name)))

    @property
    def k1(self) -> float:
        return self.sigma + self.mu_A + self.l_A

    @property
    def k2(self) -> float:
        return self.mu_I + self.l_I

    def replace(self, **kw) -> "ModelParams":
        return replace(self, **kw)

    def with_controls(self, l_A: float, l_I: float) -> "ModelParams":
        return replace(self, l_A=float(l_A), l_I=float(l_I))


def param_errors(p: ModelParams, t_max: float | None = None) -> list[str]:
    """Every violated invariant of ModelParams, as named messages."""
    errs = []
    for name in ("sigma", "mu_A", "mu_I", "mu_L"):
        if getattr(p, name) < 0:
            errs.append(f"{name} must be >= 0")
    for name in ("l_A", "l_I"):
        v = getattr(p, name)
        if not 0.0 <= v <= 1.0:
            errs.append(f"{name} out of [0,1]")
    if not p.k1 > 0:
        errs.append("k1 = sigma + mu_A + l_A must be > 0")
    if not p.k2 > 0:
        errs.append("k2 = mu_I + l_I must be > 0")
    if not p.N > 0:
        errs.append("N must be > 0")
    for name in ("beta_I", "beta_A", "xi"):
        table = getattr(p, name)
        if np.min(table.values) < 0:
            errs.append(f"{name}: negative coefficient")
        if t_max is not None and not table.covers(0.0, t_max):
            errs.append(f"{name}: table does not cover [0, {t_max}]")
    return errs


def validate_params(p: ModelParams, t_max: float | None = None) -> ModelParams:
    """Return p unchanged if valid; raise ValidationError listing every violation."""
    errs = param_errors(p, t_max)
    if errs:
        raise ValidationError(errs)
    return p


def rhs(x, p: ModelParams, t: float) -> np.ndarray:
    """Time derivative of (S, A, I, L, R) at state x and time t.

    The five components sum to zero up to floating-point rounding.
    """
    S, A, I, L, R = (float(v) for v in (x.as_array() if isinstance(x, State) else x))
    bI = p.beta_I(t)
    bA = p.beta_A(t)
    xi = p.xi(t)
    infections = bI * S * I + bA * S * A
    return np.array([
        -infections + xi * R,
        infections - p.k1 * A,
        p.sigma * A - p.k2 * I,
        p.l_A * A + p.l_I * I - p.mu_L * L,
        p.mu_A * A + p.mu_I * I + p.mu_L * L - xi * R,
    ])


def _stage_coefficients(p: ModelParams, grid: Grid):
    """beta_I, beta_A, xi evaluated at all 2M+1 RK4 stage times, as lists."""
    th = grid.half_points()
    return p.beta_I(th).tolist(), p.beta_A(th).tolist(), p.xi(th).tolist()


def _rk4_model(sigma, muA, muI, muL, lA, lI, bI, bA, xi, x0, M, h):
    # Hot loop: plain float arithmetic on list-indexed coefficients.
    out = np.empty((M + 1, 5))
    S, A, I, L, R = (float(v) for v in x0)
    out[0] = S, A, I, L, R
    k1c = sigma + muA + lA
    k2c = muI + lI
    h2 = 0.5 * h
    h6 = h / 6.0
    for k in range(M):
        j = 2 * k
        b0 = bI[j]; c0 = bA[j]; e0 = xi[j]
        b1 = bI[j + 1]; c1 = bA[j + 1]; e1 = xi[j + 1]
        b2 = bI[j + 2]; c2 = bA[j + 2]; e2 = xi[j + 2]

        inf = b0 * S * I + c0 * S * A
        dS1 = -inf + e0 * R; dA1 = inf - k1c * A; dI1 = sigma * A - k2c * I
        dL1 = lA * A + lI * I - muL * L; dR1 = muA * A + muI * I + muL * L - e0 * R
        S2 = S + h2 * dS1; A2 = A + h2 * dA1; I2 = I + h2 * dI1
        L2 = L + h2 * dL1; R2 = R + h2 * dR1

        inf = b1 * S2 * I2 + c1 * S2 * A2
        dS2 = -inf + e1 * R2; dA2 = inf - k1c * A2; dI2 = sigma * A2 - k2c * I2
        dL2 = lA * A2 + lI * I2 - muL * L2; dR2 = muA * A2 + muI * I2 + muL * L2 - e1 * R2
        S3 = S + h2 * dS2; A3 = A + h2 * dA2; I3 = I + h2 * dI2
        L3 = L + h2 * dL2; R3 = R + h2 * dR2

        inf = b1 * S3 * I3 + c1 * S3 * A3
        dS3 = -inf + e1 * R3; dA3 = inf - k1c * A3; dI3 = sigma * A3 - k2c * I3
        dL3 = lA * A3 + lI * I3 - muL * L3; dR3 = muA * A3 + muI * I3 + muL * L3 - e1 * R3
        S4 = S + h * dS3; A4 = A + h * dA3; I4 = I + h * dI3
        L4 = L + h * dL3; R4 = R + h * dR3

        inf = b2 * S4 * I4 + c2 * S4 * A4
        dS4 = -inf + e2 * R4; dA4 = inf - k1c * A4; dI4 = sigma * A4 - k2c * I4
        dL4 = lA * A4 + lI * I4 - muL * L4; dR4 = muA * A4 + muI * I4 + muL * L4 - e2 * R4

        S += h6 * (dS1 + 2.0 * (dS2 + dS3) + dS4)
        A += h6 * (dA1 + 2.0 * (dA2 + dA3) + dA4)
        I += h6 * (dI1 + 2.0 * (dI2 + dI3) + dI4)
        L += h6 * (dL1 + 2.0 * (dL2 + dL3) + dL4)
        R += h6 * (dR1 + 2.0 * (dR2 + dR3) + dR4)
        tot = S + A + I + L + R
        if not (-1e100 < tot < 1e100):
            raise BlowupError(k + 1)
        out[k + 1, 0] = S; out[k + 1, 1] = A; out[k + 1, 2] = I
        out[k + 1, 3] = L; out[k + 1, 4] = R
    return out


def simulate(p: ModelParams, x0, grid: Grid) -> Trajectory:
    """Forward RK4 solve of the model on the grid (same discrete map as
    integrate_forward with rhs, specialized for speed)."""
    validate_params(p, t_max=grid.T)
    x0 = x0.as_array() if isinstance(x0, State) else np.asarray(x0, dtype=float)
    bI, bA, xi = _stage_coefficients(p, grid)
    states = _rk4_model(p.sigma, p.mu_A, p.mu_I, p.mu_L, p.l_A, p.l_I,
                        bI, bA, xi, x0, grid.M, grid.h)
    return Trajectory(grid, states)


def _rk4_model_vjp(p: ModelParams, traj: Trajectory, cotangent):
    # Exact reverse-mode sweep of the discrete RK4 map: for the scalar
    # phi = cotangent . x_M, returns (d phi/d x0, d phi/d beta_I at the
    # 2M+1 stage samples).  Stage states are recomputed from the stored
    # grid states, so the result is exact for the discrete flow.
    g = traj.grid
    M, h = g.M, g.h
    bIl, bAl, xil = _stage_coefficients(p, g)
    sigma, muA, muI, muL = p.sigma, p.mu_A, p.mu_I, p.mu_L
    lA, lI = p.l_A, p.l_I
    k1c, k2c = p.k1, p.k2
    h2 = 0.5 * h
    h6 = h / 6.0
    out = traj.states.tolist()
    bbar = np.zeros(2 * M + 1)
    vS, vA, vI, vL, vR = (float(c) for c in cotangent)

    for k in range(M - 1, -1, -1):
        j = 2 * k
        b0 = bIl[j]; c0 = bAl[j]; e0 = xil[j]
        b1 = bIl[j + 1]; c1 = bAl[j + 1]; e1 = xil[j + 1]
        b2 = bIl[j + 2]; c2 = bAl[j + 2]; e2 = xil[j + 2]
        S, A, I, L, R = out[k]

        # recompute the forward stages
        inf = b0 * S * I + c0 * S * A
        dS1 = -inf + e0 * R; dA1 = inf - k1c * A; dI1 = sigma * A - k2c * I
        dL1 = lA * A + lI * I - muL * L; dR1 = muA * A + muI * I + muL * L - e0 * R
        S2 = S + h2 * dS1; A2 = A + h2 * dA1; I2 = I + h2 * dI1
        L2 = L + h2 * dL1; R2 = R + h2 * dR1
        inf = b1 * S2 * I2 + c1 * S2 * A2
        dS2 = -inf + e1 * R2; dA2 = inf - k1c * A2; dI2 = sigma * A2 - k2c * I2
        dL2 = lA * A2 + lI * I2 - muL * L2; dR2 = muA * A2 + muI * I2 + muL * L2 - e1 * R2
        S3 = S + h2 * dS2; A3 = A + h2 * dA2; I3 = I + h2 * dI2
        L3 = L + h2 * dL2; R3 = R + h2 * dR2
        inf = b1 * S3 * I3 + c1 * S3 * A3
        dS3 = -inf + e1 * R3; dA3 = inf - k1c * A3; dI3 = sigma * A3 - k2c * I3
        dL3 = lA * A3 + lI * I3 - muL * L3
        S4 = S + h * dS3; A4 = A + h * dA3; I4 = I + h * dI3
        L4 = L + h * dL3; R4 = R + h * (muA * A3 + muI * I3 + muL * L3 - e1 * R3)

        # reverse: x_{k+1} = x_k + h6*(d1 + 2 d2 + 2 d3 + d4)
        w1S = h6 * vS; w1A = h6 * vA; w1I = h6 * vI; w1L = h6 * vL; w1R = h6 * vR
        w2S = 2 * w1S; w2A = 2 * w1A; w2I = 2 * w1I; w2L = 2 * w1L; w2R = 2 * w1R

        # stage 4 at (x4, b2): cotangent w1 -> x4bar, bbar[j+2]
        bbar[j + 2] += S4 * I4 * (w1A - w1S)
        k0 = b2 * I4 + c2 * A4
        x4S = k0 * (w1A - w1S)
        x4A = -c2 * S4 * w1S + (c2 * S4 - k1c) * w1A + sigma * w1I + lA * w1L + muA * w1R
        x4I = b2 * S4 * (w1A - w1S) - k2c * w1I + lI * w1L + muI * w1R
        x4L = muL * (w1R - w1L)
        x4R = e2 * (w1S - w1R)
        # x4 = x + h*d3  ->  d3bar += h*x4bar (onto w2 of stage 3)
        d3S = w2S + h * x4S; d3A = w2A + h * x4A; d3I = w2I + h * x4I
        d3L = w2L + h * x4L; d3R = w2R + h * x4R

        # stage 3 at (x3, b1)
        bbar[j + 1] += S3 * I3 * (d3A - d3S)
        k0 = b1 * I3 + c1 * A3
        x3S = k0 * (d3A - d3S)
        x3A = -c1 * S3 * d3S + (c1 * S3 - k1c) * d3A + sigma * d3I + lA * d3L + muA * d3R
        x3I = b1 * S3 * (d3A - d3S) - k2c * d3I + lI * d3L + muI * d3R
        x3L = muL * (d3R - d3L)
        x3R = e1 * (d3S - d3R)
        d2S = w2S + h2 * x3S; d2A = w2A + h2 * x3A; d2I = w2I + h2 * x3I
        d2L = w2L + h2 * x3L; d2R = w2R + h2 * x3R

        # stage 2 at (x2, b1)
        bbar[j + 1] += S2 * I2 * (d2A - d2S)
        k0 = b1 * I2 + c1 * A2
        x2S = k0 * (d2A - d2S)
        x2A = -c1 * S2 * d2S + (c1 * S2 - k1c) * d2A + sigma * d2I + lA * d2L + muA * d2R
        x2I = b1 * S2 * (d2A - d2S) - k2c * d2I + lI * d2L + muI * d2R
        x2L = muL * (d2R - d2L)
        x2R = e1 * (d2S - d2R)
        d1S = w1S + h2 * x2S; d1A = w1A + h2 * x2A; d1I = w1I + h2 * x2I
        d1L = w1L + h2 * x2L; d1R = w1R + h2 * x2R

        # stage 1 at (x, b0); accumulate into the carried cotangent
        bbar[j] += S * I * (d1A - d1S)
        k0 = b0 * I + c0 * A
        vS = vS + k0 * (d1A - d1S) + x4S + x3S + x2S
        vA = (vA - c0 * S * d1S + (c0 * S - k1c) * d1A + sigma * d1I + lA * d1L
              + muA * d1R + x4A + x3A + x2A)
        vI = vI + b0 * S * (d1A - d1S) - k2c * d1I + lI * d1L + muI * d1R + x4I + x3I + x2I
        vL = vL + muL * (d1R - d1L) + x4L + x3L + x2L
        vR = vR + e0 * (d1S - d1R) + x4R + x3R + x2R

    return np.array([vS, vA, vI, vL, vR]), bbar


def stage_to_knot_gradient(bbar: np.ndarray) -> np.ndarray:
    """Collapse a gradient over the 2M+1 stage samples of a grid-knotted
    piecewise-linear table onto its M+1 knot values (midpoints average
    their two neighbouring knots)."""
    out = bbar[0::2].copy()
    out[:-1] += 0.5 * bbar[1::2]
    out[1:] += 0.5 * bbar[1::2]
    return out
