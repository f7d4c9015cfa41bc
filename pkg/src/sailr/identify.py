"""Identification of (beta_I(t), A0, I0) from isolated/recovered observations.

Observed are the isolated and recovered fractions at t = 0 and t = T.  The
unobserved transmission rate beta_I (a grid function), and the undetected
counts A0, I0 (hence S0 = N0 - A0 - I0), are recovered by minimizing the
terminal mismatch plus small quadratic regularizers, with the gradient
supplied by one backward dual sweep per iterate.

The optimizer is projected gradient with a Barzilai-Borwein trial step and
monotone Armijo backtracking, projecting beta_I onto {beta >= 0} pointwise
and (A0, I0) onto the triangle K0 = {y, z >= 0, y + z <= N0}.  The
fixed-point optimality maps (positive-part projection for beta_I and the
Gamma-resolvent for (A0, I0)) are used as the convergence certificate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import FeasibilityError, StallError, ValidationError
from .integrate import Grid, Trajectory, trapezoid
from .linearize import AdjointTrajectory, adjoint_p0
from .model import (CoefficientTable, ModelParams, _rk4_model_vjp, simulate,
                    stage_to_knot_gradient)

#: resolvent matrix coupling (A0, I0) in the initial-data optimality condition
GAMMA = np.array([[2.0, 1.0], [1.0, 2.0]])


@dataclass(frozen=True)
class Observations:
    """Isolated/recovered fractions measured at t = 0 and t = T."""

    L0: float
    R0: float
    LT: float
    RT: float
    T: float

    def __post_init__(self):
        errs = []
        for name in ("L0", "R0", "LT", "RT"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                errs.append(f"observations.{name} out of [0,1]")
        if self.L0 + self.R0 > 1.0 + 1e-12:
            errs.append("observations.L0 + R0 exceeds total population")
        if not self.T > 0:
            errs.append("observations.T must be > 0")
        if errs:
            raise ValidationError(errs)


def n0_of(params: ModelParams, obs: Observations) -> float:
    """Unobserved initial mass N0 = N - (L0 + R0), shared by S0, A0, I0."""
    return params.N - (obs.L0 + obs.R0)


@dataclass(frozen=True)
class IdentCandidate:
    """A feasible point of the identification problem."""

    beta_I: CoefficientTable
    A0: float
    I0: float

    def s0(self, n0: float) -> float:
        return n0 - self.A0 - self.I0


@dataclass
class IdentResult:
    candidate: IdentCandidate
    cost: float
    cost_history: np.ndarray
    optimality_residual: float
    trajectory: Trajectory
    adjoint: AdjointTrajectory
    iterations: int
    converged: bool
    forward_solves: int = 0


@dataclass(frozen=True)
class IdentConfig:
    """Solver knobs for solve_p0 (defaults favour tight data fits)."""

    tol: float = 1e-6
    max_iters: int = 3000
    beta_init: float = 0.1
    armijo_c: float = 1e-4
    max_backtracks: int = 60
    step_max: float = 1e14


def _check_feasible(c: IdentCandidate, n0: float):
    tol = 1e-12 * max(1.0, n0)
    if c.A0 < -tol or c.I0 < -tol or c.A0 + c.I0 > n0 + tol:
        raise FeasibilityError(
            f"(A0, I0)=({c.A0}, {c.I0}) outside K0 with N0={n0}; project first")
    if np.min(c.beta_I.values) < 0:
        raise FeasibilityError("beta_I must be nonnegative; project first")


def _check_grid(grid: Grid, obs: Observations):
    if abs(grid.t0) > 1e-12 or abs(grid.T - obs.T) > 1e-9 * max(1.0, obs.T):
        raise ValidationError("identification grid must span [0, observations.T]")


def _forward(c: IdentCandidate, obs: Observations, params: ModelParams,
             grid: Grid) -> Trajectory:
    n0 = n0_of(params, obs)
    x0 = (c.s0(n0), c.A0, c.I0, obs.L0, obs.R0)
    return simulate(params.replace(beta_I=c.beta_I), x0, grid)


def _cost_terms(c: IdentCandidate, obs: Observations, alpha0: float, alpha1: float,
                params: ModelParams, grid: Grid, traj: Trajectory):
    n0 = n0_of(params, obs)
    mis = 0.5 * (traj.L[-1] - obs.LT) ** 2 + 0.5 * (traj.R[-1] - obs.RT) ** 2
    bg = np.asarray(c.beta_I(grid.points()), dtype=float)
    reg_b = 0.5 * alpha1 * trapezoid(bg * bg, grid.h)
    s0 = c.s0(n0)
    reg_0 = 0.5 * alpha0 * (c.A0 ** 2 + c.I0 ** 2 + s0 ** 2)
    return mis, reg_b, reg_0


def cost_p0(c: IdentCandidate, obs: Observations, alpha0: float, alpha1: float,
            params: ModelParams, grid: Grid) -> float:
    """Identification cost: terminal mismatch + quadratic regularizers."""
    _check_grid(grid, obs)
    _check_feasible(c, n0_of(params, obs))
    traj = _forward(c, obs, params, grid)
    mis, reg_b, reg_0 = _cost_terms(c, obs, alpha0, alpha1, params, grid, traj)
    return mis + reg_b + reg_0


def _gradient(c, obs, alpha0, alpha1, params, grid, traj=None):
    """Gradient triple plus the forward/adjoint sweeps and cost that produced it."""
    n0 = n0_of(params, obs)
    if traj is None:
        traj = _forward(c, obs, params, grid)
    pr = params.replace(beta_I=c.beta_I)
    adj = adjoint_p0(traj, pr, obs)
    bg = np.asarray(c.beta_I(grid.points()), dtype=float)
    gbeta = alpha1 * bg - (adj.p - adj.q) * traj.S * traj.I
    p0, q0, d0 = float(adj.p[0]), float(adj.q[0]), float(adj.d[0])
    gA0 = q0 - p0 + alpha0 * (2.0 * c.A0 + c.I0 - n0)
    gI0 = d0 - p0 + alpha0 * (2.0 * c.I0 + c.A0 - n0)
    mis, reg_b, reg_0 = _cost_terms(c, obs, alpha0, alpha1, params, grid, traj)
    return gbeta, gA0, gI0, traj, adj, mis + reg_b + reg_0


def gradient_p0(c: IdentCandidate, obs: Observations, alpha0: float, alpha1: float,
                params: ModelParams, grid: Grid):
    """Adjoint gradient of cost_p0: (grid function for beta_I, dA0, dI0).

    One forward and one backward sweep; the beta_I component is the
    L2-gradient sampled at grid points.
    """
    _check_grid(grid, obs)
    _check_feasible(c, n0_of(params, obs))
    gbeta, gA0, gI0, _, _, _ = _gradient(c, obs, alpha0, alpha1, params, grid)
    return gbeta, gA0, gI0


def project_kplus_grid(g) -> np.ndarray:
    """Pointwise projection onto {values >= 0}."""
    return np.maximum(np.asarray(g, dtype=float), 0.0)


def _min_quadratic_triangle(Q, b, n0: float):
    """Minimize 0.5 z'Qz - b'z over the triangle {z >= 0, z1 + z2 <= n0}.

    Enumerates the unconstrained stationary point, the three clamped edge
    minimizers and the three vertices; strict convexity makes the minimum
    unique up to ties broken toward smaller z1, then smaller z2.
    """
    q11, q12, q22 = float(Q[0][0]), float(Q[0][1]), float(Q[1][1])
    b1, b2 = float(b[0]), float(b[1])
    cands = [(0.0, 0.0), (n0, 0.0), (0.0, n0)]
    det = q11 * q22 - q12 * q12
    zu = ((q22 * b1 - q12 * b2) / det, (q11 * b2 - q12 * b1) / det)
    if zu[0] >= 0 and zu[1] >= 0 and zu[0] + zu[1] <= n0:
        cands.append(zu)
    cands.append((min(max(b1 / q11, 0.0), n0), 0.0))
    cands.append((0.0, min(max(b2 / q22, 0.0), n0)))
    denom = q11 - 2.0 * q12 + q22
    if denom > 0:
        t = min(max((b1 - b2 + (q22 - q12) * n0) / denom, 0.0), n0)
        cands.append((t, n0 - t))

    def phi(z):
        z1, z2 = z
        return 0.5 * (q11 * z1 * z1 + 2.0 * q12 * z1 * z2 + q22 * z2 * z2) - b1 * z1 - b2 * z2

    vals = [phi(z) for z in cands]
    vmin = min(vals)
    tol = 1e-14 * abs(vmin)  # relative only: must not swamp tiny differences
    tied = [z for z, v in zip(cands, vals) if v <= vmin + tol]
    return min(tied)  # lexicographic: smaller z1, then smaller z2


def resolve_k0(y, n0: float):
    """Resolvent of Gamma + normal cone of K0: argmin 0.5 z'Gz - y.z over K0."""
    if not n0 > 0:
        raise ValueError("N0 must be > 0")
    return _min_quadratic_triangle(GAMMA, y, n0)


def project_k0(y, n0: float):
    """Euclidean projection onto the triangle K0."""
    if not n0 > 0:
        raise ValueError("N0 must be > 0")
    return _min_quadratic_triangle(((1.0, 0.0), (0.0, 1.0)), y, n0)


def optimality_residual_p0(c: IdentCandidate, traj: Trajectory, adj: AdjointTrajectory,
                           alpha0: float, alpha1: float, n0: float) -> float:
    """Fixed-point gap of the first-order optimality conditions.

    Max of (a) the sup-norm distance of beta_I from its projection formula
    and (b) the Euclidean distance of (A0, I0) from the Gamma-resolvent of
    the initial adjoint values.  Degenerate weights fall back to
    complementarity / projected-gradient forms.
    """
    bg = np.asarray(c.beta_I(traj.grid.points()), dtype=float)
    m = (adj.p - adj.q) * traj.S * traj.I
    if alpha1 > 0:
        res_a = float(np.max(np.abs(bg - np.maximum(m / alpha1, 0.0))))
    else:
        # complementarity: m = 0 where beta > 0, m <= 0 where beta = 0
        res_a = float(np.max(np.where(bg > 0, np.abs(m), np.maximum(m, 0.0))))
    p0, q0, d0 = float(adj.p[0]), float(adj.q[0]), float(adj.d[0])
    if alpha0 > 0:
        y = ((p0 - q0) / alpha0 + n0, (p0 - d0) / alpha0 + n0)
        zA, zI = resolve_k0(y, n0)
    else:
        gA0, gI0 = q0 - p0, d0 - p0
        zA, zI = project_k0((c.A0 - gA0, c.I0 - gI0), n0)
    res_b = float(np.hypot(c.A0 - zA, c.I0 - zI))
    return max(res_a, res_b)


def _beta_table(grid: Grid, values: np.ndarray) -> CoefficientTable:
    return CoefficientTable(grid.points(), values)


_GAMMA_INV = np.array([[2.0, -1.0], [-1.0, 2.0]]) / 3.0


def _exact_rows(params_c: ModelParams, traj: Trajectory, wq):
    """Exact Jacobian rows of the terminal (L, R) w.r.t. the discrete unknowns.

    One reverse sweep of the discrete RK4 map per observed component;
    rows come back as their weighted-inner-product representers (so
    row . direction integrates with the trapezoid weights wq), blocks as
    the (A0, I0) partials with the S0 = N0 - A0 - I0 dependence folded in.
    """
    rows = []
    blocks = []
    for cot in ((0.0, 0.0, 0.0, 1.0, 0.0), (0.0, 0.0, 0.0, 0.0, 1.0)):
        x0bar, bbar = _rk4_model_vjp(params_c, traj, cot)
        rows.append(stage_to_knot_gradient(bbar) / wq)
        blocks.append(np.array([x0bar[1] - x0bar[0], x0bar[2] - x0bar[0]]))
    return rows, blocks


def _gn_direction(gbeta, gblock, rows, blocks, alpha0, alpha1, wq, free, free_block):
    """Trial direction from the exact Gauss-Newton model of the cost.

    The data term has a rank-two Jacobian, so the Woodbury identity gives
    the Newton direction of (regularizers + rank-2 data model) in O(M).
    Clamped coordinates whose multiplier sign is already correct are
    frozen (masks `free`, `free_block`), so the model is solved on the
    working set only.  Descent for the true gradient since the model
    Hessian is positive definite on it.
    """
    rows_f = [np.where(free, r, 0.0) for r in rows]
    g_f = np.where(free, gbeta, 0.0)
    # inverse of the (A0, I0) regularizer Hessian restricted to free coords
    if free_block[0] and free_block[1]:
        binv = _GAMMA_INV / alpha0
    elif free_block[0] or free_block[1]:
        binv = np.zeros((2, 2))
        i = 0 if free_block[0] else 1
        binv[i, i] = 1.0 / (2.0 * alpha0)
    else:
        binv = np.zeros((2, 2))
    gb_f = np.where(free_block, gblock, 0.0)
    blocks_f = [np.where(free_block, b, 0.0) for b in blocks]
    s2 = np.eye(2)
    b2 = np.empty(2)
    ginv_block = binv @ gb_f
    for i in range(2):
        for j in range(2):
            s2[i, j] += (float(np.dot(wq * rows_f[i], rows_f[j])) / alpha1
                         + float(blocks_f[i] @ (binv @ blocks_f[j])))
        b2[i] = float(np.dot(wq * rows_f[i], g_f)) / alpha1 + float(blocks_f[i] @ ginv_block)
    c = np.linalg.solve(s2, b2)
    dbeta = -(g_f - c[0] * rows_f[0] - c[1] * rows_f[1]) / alpha1
    dblock = -(binv @ (gb_f - c[0] * blocks_f[0] - c[1] * blocks_f[1]))
    return dbeta, dblock


def solve_p0(obs: Observations, params: ModelParams, grid: Grid,
             alpha0: float = 1e-6, alpha1: float = 1e-6,
             config: IdentConfig | None = None) -> IdentResult:
    """Minimize cost_p0 over feasible (beta_I, A0, I0).

    beta_I is discretized as values on the integration grid.  Projected
    descent with monotone Armijo backtracking along the projection arc:
    the trial direction is the exact Gauss-Newton direction of the
    rank-2-data-plus-regularizer model (needed because the certificate
    tolerance divides by the small weights), with a Barzilai-Borwein
    gradient step as fallback.  Iterates stay feasible (pointwise clamp
    for beta_I, Euclidean triangle projection for (A0, I0)); cost_history
    is nonincreasing; terminates when the optimality residual drops below
    config.tol or max_iters is reached.  Raises StallError (carrying the
    best iterate) if no direction can make progress.
    """
    cfg = config or IdentConfig()
    _check_grid(grid, obs)
    n0 = n0_of(params, obs)
    if not n0 > 0:
        raise ValidationError("N0 = N - (L0 + R0) must be > 0")

    tg = grid.points()
    wq = np.full(tg.size, grid.h)
    wq[0] = wq[-1] = 0.5 * grid.h

    def inner(u1, a1, i1, u2, a2, i2):
        return float(np.dot(wq * u1, u2) + a1 * a2 + i1 * i2)

    bg = np.full(tg.size, float(cfg.beta_init))
    A0 = I0 = n0 / 4.0
    nsolves = 0

    def make(bgv, a, i):
        return IdentCandidate(_beta_table(grid, bgv), a, i)

    def exact_state(cand, traj):
        # Exact discrete gradient (reverse-mode rows of the terminal data)
        # plus the continuous-adjoint sweep used by the certificate.
        nonlocal nsolves
        pr_c = params.replace(beta_I=cand.beta_I)
        rows, blocks = _exact_rows(pr_c, traj, wq)
        r1 = float(traj.L[-1] - obs.LT)
        r2 = float(traj.R[-1] - obs.RT)
        gb = alpha1 * np.asarray(cand.beta_I(tg)) + r1 * rows[0] + r2 * rows[1]
        gA = r1 * blocks[0][0] + r2 * blocks[1][0] + alpha0 * (2 * cand.A0 + cand.I0 - n0)
        gI = r1 * blocks[0][1] + r2 * blocks[1][1] + alpha0 * (2 * cand.I0 + cand.A0 - n0)
        adj = adjoint_p0(traj, pr_c, obs)
        nsolves += 3
        residual = optimality_residual_p0(cand, traj, adj, alpha0, alpha1, n0)
        return gb, gA, gI, rows, blocks, adj, residual

    cand = make(bg, A0, I0)
    traj = _forward(cand, obs, params, grid)
    nsolves += 1
    mis, reg_b, reg_0 = _cost_terms(cand, obs, alpha0, alpha1, params, grid, traj)
    J = mis + reg_b + reg_0
    gbeta, gA0, gI0, rows, blocks, adj, residual = exact_state(cand, traj)
    history = [J]
    converged = residual <= cfg.tol
    best = (J, cand, traj, adj, residual)

    def arc_search(db, dA, dI, t0, J):
        # Armijo along the projected arc x + t*(direction); None if no luck.
        nonlocal nsolves
        t = t0
        for _ in range(cfg.max_backtracks):
            nb = np.maximum(bg + t * db, 0.0)
            nA, nI = project_k0((A0 + t * dA, I0 + t * dI), n0)
            dpred = inner(gbeta, gA0, gI0, nb - bg, nA - A0, nI - I0)
            if dpred >= 0.0:
                t *= 0.5
                continue
            ncand = make(nb, nA, nI)
            ntraj = _forward(ncand, obs, params, grid)
            nsolves += 1
            mis, reg_b, reg_0 = _cost_terms(ncand, obs, alpha0, alpha1, params, grid, ntraj)
            Jn = mis + reg_b + reg_0
            if Jn <= J + cfg.armijo_c * dpred:
                return nb, nA, nI, ncand, ntraj, Jn
            t *= 0.5
        return None

    gnorm0 = np.sqrt(inner(gbeta, gA0, gI0, gbeta, gA0, gI0))
    step = 1.0 / max(gnorm0, 1e-10)
    prev = None
    it = 0
    while not converged and it < cfg.max_iters:
        it += 1
        move = None
        if alpha0 > 0 and alpha1 > 0:
            free = (bg > 0.0) | (gbeta < 0.0)
            edge = A0 + I0 >= n0 * (1.0 - 1e-12)
            free_block = np.array([(A0 > 0.0 or gA0 < 0.0) and not (edge and gA0 > gI0),
                                   (I0 > 0.0 or gI0 < 0.0) and not (edge and gI0 > gA0)])
            db, dblock = _gn_direction(gbeta, np.array([gA0, gI0]), rows, blocks,
                                       alpha0, alpha1, wq, free, free_block)
            move = arc_search(db, dblock[0], dblock[1], 1.0, J)
        if move is None:
            if prev is not None:
                dxb, dxA, dxI, yb, yA, yI = prev
                sy = inner(dxb, dxA, dxI, yb, yA, yI)
                ss = inner(dxb, dxA, dxI, dxb, dxA, dxI)
                if sy > 0 and ss > 0:
                    step = min(ss / sy, cfg.step_max)  # BB1 spectral step
            move = arc_search(-gbeta, -gA0, -gI0, step, J)
        if move is None:
            result = IdentResult(best[1], best[0], np.asarray(history), best[4],
                                 best[2], best[3], it, False, nsolves)
            raise StallError("line search stalled before reaching tolerance", best=result)

        nb, nA, nI, ncand, ntraj, J = move
        prev_g = (gbeta, gA0, gI0)
        dxb, dxA, dxI = nb - bg, nA - A0, nI - I0
        bg, A0, I0, cand, traj = nb, nA, nI, ncand, ntraj
        gbeta, gA0, gI0, rows, blocks, adj, residual = exact_state(cand, traj)
        prev = (dxb, dxA, dxI,
                gbeta - prev_g[0], gA0 - prev_g[1], gI0 - prev_g[2])
        history.append(J)
        if J <= best[0]:
            best = (J, cand, traj, adj, residual)
        converged = residual <= cfg.tol

    return IdentResult(cand, J, np.asarray(history), residual, traj, adj,
                       it, converged, nsolves)
