"""State-constrained optimal testing/isolation control.

The controls are the scalar detection rates (l_A, l_I) in [0,1]^2; the
isolated fraction must respect L(t) <= Lhat.  The constraint is handled by
exterior quadratic penalization with weight alpha2/eps and a continuation
eps -> 0.  Each penalized stage is solved by a damped forward-backward
fixed-point sweep (forward state solve, backward dual solve, projection
update), with a projected-gradient fallback if the sweep oscillates.

The adapted quadratic terms 0.5*(l - anchor)^2 in the stage cost reference
an anchor control pair; the continuation self-anchors by passing each
stage's solution as the next stage's anchor, so the adaptation penalty
vanishes along the schedule and the stage fixed point approaches the
limit optimality conditions (projection with divisor alpha1 instead of
alpha1 + 1), which are reported as the convergence certificate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import FeasibilityError, StageStallError, ValidationError
from .integrate import Grid, Trajectory, trapezoid
from .linearize import AdjointTrajectory, adjoint_p_eps
from .model import ModelParams, State, TOL_NEG, simulate


def default_eps_schedule(n: int = 13, first: float = 0.1) -> tuple:
    """Geometric penalty schedule first * 2^-k, k = 0..n-1."""
    return tuple(first * 2.0 ** -k for k in range(n))


def _clamp01(x: float) -> float:
    return min(max(float(x), 0.0), 1.0)


@dataclass(frozen=True)
class ControlPair:
    lA: float
    lI: float

    def __post_init__(self):
        if not (0.0 <= self.lA <= 1.0 and 0.0 <= self.lI <= 1.0):
            raise ValidationError("controls must lie in [0,1]^2")

    def dist(self, other: "ControlPair") -> float:
        return max(abs(self.lA - other.lA), abs(self.lI - other.lI))


@dataclass(frozen=True)
class PenaltyConfig:
    """Weights, bound and schedule for the penalized control problem."""

    alpha0: float
    alpha1: float
    alpha2: float
    Lhat: float
    eps_schedule: tuple = field(default_factory=default_eps_schedule)
    anchor: ControlPair = ControlPair(0.5, 0.5)

    def __post_init__(self):
        errs = []
        if not self.alpha1 > 0:
            errs.append("alpha1 must be > 0 (the limit projection divides by it)")
        if self.alpha0 < 0 or self.alpha2 < 0:
            errs.append("alpha0 and alpha2 must be >= 0")
        sched = tuple(float(e) for e in self.eps_schedule)
        if not sched or any(e <= 0 for e in sched):
            errs.append("eps_schedule entries must be positive")
        elif any(b >= a for a, b in zip(sched, sched[1:])):
            errs.append("eps_schedule must be strictly decreasing")
        if errs:
            raise ValidationError(errs)
        object.__setattr__(self, "eps_schedule", sched)


@dataclass(frozen=True)
class ControlConfig:
    """Iteration knobs for the stage solver and the continuation."""

    theta: float = 0.5            # relaxation of the fixed-point sweep
    tol_fp: float = 1e-9          # stage fixed-point tolerance on controls
    fp_floor: float = 1e-7        # plateaued sweeps below this still count as converged
    max_sweeps: int = 200
    osc_window: int = 3           # cost increases before gradient fallback
    max_pg_iters: int = 200
    armijo_c: float = 1e-4
    max_backtracks: int = 60
    tol_constraint: float = 1e-4  # on sup (L - Lhat)^+
    tol_residual: float = 1e-3    # on the limit fixed-point residual
    polish_max: int = 200         # extra self-anchored stages at final eps


@dataclass
class StageResult:
    eps: float
    controls: ControlPair
    cost_eps: float
    fp_residual: float
    sweeps: int
    used_fallback: bool
    trajectory: Trajectory
    adjoint: AdjointTrajectory
    penalty_integral: float
    forward_solves: int
    converged: bool
    #: L1 norm of the discrete multiplier (alpha2/eps)(L - Lhat)^+ on this
    #: stage; reported, not certified (its regularity near the contact set
    #: is an open point of the penalty scheme)
    multiplier_l1: float = 0.0


@dataclass
class ControlResult:
    controls: ControlPair
    trajectory: Trajectory
    adjoint: AdjointTrajectory
    cost: float
    constraint_violation: float
    multiplier_diag: np.ndarray
    per_eps_history: list
    limit_residual: float
    converged: bool
    notes: list
    forward_solves: int = 0


def constraint_violation(traj: Trajectory, lhat: float) -> float:
    """sup over the grid of (L - lhat)^+; L >= 0 is asserted, not enforced."""
    Lmin = float(np.min(traj.L))
    if Lmin < -TOL_NEG:
        raise FeasibilityError(f"L(t) fell below 0 ({Lmin}); state not admissible")
    return float(np.max(np.maximum(traj.L - lhat, 0.0)))


def _x0_array(x0):
    return x0.as_array() if isinstance(x0, State) else np.asarray(x0, dtype=float)


def _cost_p_from(traj: Trajectory, ctrl: ControlPair, alpha0: float, alpha1: float) -> float:
    h = traj.grid.h
    run = 0.5 * alpha0 * (trapezoid(traj.A ** 2, h) + trapezoid(traj.I ** 2, h))
    return run + 0.5 * alpha1 * (ctrl.lA ** 2 + ctrl.lI ** 2)


def _penalty_integral(traj: Trajectory, lhat: float) -> float:
    return trapezoid(np.maximum(traj.L - lhat, 0.0) ** 2, traj.grid.h)


def _multiplier_l1(traj: Trajectory, lhat: float, alpha2: float, eps: float) -> float:
    return (alpha2 / eps) * trapezoid(np.maximum(traj.L - lhat, 0.0), traj.grid.h)


def _cost_p_eps_from(traj, ctrl, pcfg: PenaltyConfig, eps: float, anchor: ControlPair) -> float:
    pen = 0.5 * (pcfg.alpha2 / eps) * _penalty_integral(traj, pcfg.Lhat)
    adapt = 0.5 * ((ctrl.lA - anchor.lA) ** 2 + (ctrl.lI - anchor.lI) ** 2)
    return _cost_p_from(traj, ctrl, pcfg.alpha0, pcfg.alpha1) + pen + adapt


def cost_p(ctrl: ControlPair, params: ModelParams, x0, grid: Grid,
           alpha0: float, alpha1: float) -> float:
    """Control cost: quadratic burden of the undetected classes plus control effort."""
    traj = simulate(params.with_controls(ctrl.lA, ctrl.lI), _x0_array(x0), grid)
    return _cost_p_from(traj, ctrl, alpha0, alpha1)


def cost_p_eps(ctrl: ControlPair, params: ModelParams, x0, grid: Grid,
               pcfg: PenaltyConfig, eps: float) -> float:
    """Penalized stage cost: cost_p + (alpha2/2eps) int((L-Lhat)^+)^2 + anchor terms."""
    if not eps > 0:
        raise ValueError("eps must be > 0")
    traj = simulate(params.with_controls(ctrl.lA, ctrl.lI), _x0_array(x0), grid)
    return _cost_p_eps_from(traj, ctrl, pcfg, eps, pcfg.anchor)


def update_controls_eps(traj: Trajectory, adjoint: AdjointTrajectory,
                        alpha1: float, anchor: ControlPair) -> ControlPair:
    """Projection form of the stage optimality conditions."""
    h = traj.grid.h
    ia = trapezoid(traj.A * (adjoint.q - adjoint.e), h)
    ii = trapezoid(traj.I * (adjoint.d - adjoint.e), h)
    return ControlPair(_clamp01((ia + anchor.lA) / (alpha1 + 1.0)),
                       _clamp01((ii + anchor.lI) / (alpha1 + 1.0)))


def _stage_sweep(pcfg, eps, params, x0, grid, anchor, ctrl, cfg):
    """One (traj, adjoint, raw update) evaluation at the current controls."""
    traj = simulate(params.with_controls(ctrl.lA, ctrl.lI), x0, grid)
    adj = adjoint_p_eps(traj, params, ctrl.lA, ctrl.lI, eps,
                        pcfg.alpha0, pcfg.alpha2, pcfg.Lhat)
    raw = update_controls_eps(traj, adj, pcfg.alpha1, anchor)
    return traj, adj, raw


def solve_p_eps(pcfg: PenaltyConfig, eps: float, params: ModelParams, x0, grid: Grid,
                init: ControlPair, config: ControlConfig | None = None,
                anchor: ControlPair | None = None,
                tol_fp: float | None = None) -> StageResult:
    """Solve one penalized stage by damped fixed-point sweeps.

    Relaxation new = theta*update + (1-theta)*old; if the stage cost rises
    on osc_window consecutive sweeps the solver falls back to projected
    gradient with Armijo backtracking on the 2-D control space.  Raises
    StageStallError (carrying the best iterate) if neither converges.
    """
    cfg = config or ControlConfig()
    tol = tol_fp if tol_fp is not None else cfg.tol_fp
    anchor = anchor if anchor is not None else pcfg.anchor
    x0 = _x0_array(x0)
    ctrl = init
    nsolves = 0
    costs = []
    res_hist = []
    bad = 0
    best = None
    used_fallback = False
    sweeps = 0
    for sweeps in range(1, cfg.max_sweeps + 1):
        traj, adj, raw = _stage_sweep(pcfg, eps, params, x0, grid, anchor, ctrl, cfg)
        nsolves += 2
        fp_res = raw.dist(ctrl)
        cost = _cost_p_eps_from(traj, ctrl, pcfg, eps, anchor)
        costs.append(cost)
        res_hist.append(fp_res)
        if best is None or fp_res <= best[4]:
            best = (cost, ctrl, traj, adj, fp_res)
        if fp_res <= tol:
            return StageResult(eps, ctrl, cost, fp_res, sweeps, used_fallback, traj, adj,
                               _penalty_integral(traj, pcfg.Lhat), nsolves, True,
                               _multiplier_l1(traj, pcfg.Lhat, pcfg.alpha2, eps))
        # oscillation detector: material cost increases, not float noise
        if (len(costs) >= 2 and fp_res > 100 * tol
                and cost > costs[-2] + 1e-12 * abs(costs[-2]) + 1e-300):
            bad += 1
        else:
            bad = 0
        if bad >= cfg.osc_window:
            used_fallback = True
            break
        if len(res_hist) > 25 and fp_res > 0.8 * res_hist[-25]:
            break  # plateaued well above tolerance; sweeping further is wasted
        ctrl = ControlPair(cfg.theta * raw.lA + (1 - cfg.theta) * ctrl.lA,
                           cfg.theta * raw.lI + (1 - cfg.theta) * ctrl.lI)

    # Newton on the fixed-point gap: handles stages where the sweep map is
    # expansive (stiff penalty); quadratic convergence from the sweep's iterate.
    ctrl, traj, adj, fp_res, cost, n = _stage_newton(pcfg, eps, params, x0, grid,
                                                     anchor, best[1], cfg, tol)
    nsolves += n
    sweeps += (n + 1) // 2
    if fp_res <= best[4]:
        best = (cost, ctrl, traj, adj, fp_res)
    if best[4] > max(tol, cfg.fp_floor):
        ctrl, traj, adj, fp_res, cost, n = _stage_pg(pcfg, eps, params, x0, grid,
                                                     anchor, best[1], cfg, tol)
        used_fallback = True
        nsolves += n
        sweeps += (n + 1) // 2
        if fp_res <= best[4]:
            best = (cost, ctrl, traj, adj, fp_res)
    cost, ctrl, traj, adj, fp_res = best
    converged = fp_res <= max(tol, cfg.fp_floor)  # accuracy floor reached
    result = StageResult(eps, ctrl, cost, fp_res, sweeps, used_fallback, traj, adj,
                         _penalty_integral(traj, pcfg.Lhat), nsolves, converged,
                         _multiplier_l1(traj, pcfg.Lhat, pcfg.alpha2, eps))
    if converged:
        return result
    raise StageStallError(
        f"stage eps={eps:g} not converged (residual {fp_res:.3e})", best=result)


def _stage_newton(pcfg, eps, params, x0, grid, anchor, ctrl, cfg, tol):
    """Damped finite-difference Newton on F(l) = update(l) - l.

    Each evaluation is one forward/backward sweep; steps are accepted only
    if they shrink |F|, so the phase cannot wander.
    """
    nsolves = 0

    def F(l):
        nonlocal nsolves
        traj, adj, raw = _stage_sweep(pcfg, eps, params, x0, grid, anchor, l, cfg)
        nsolves += 2
        return np.array([raw.lA - l.lA, raw.lI - l.lI]), traj, adj

    Fv, traj, adj = F(ctrl)
    fp = float(np.max(np.abs(Fv)))
    for _ in range(30):
        if fp <= tol:
            break
        delta = max(1e-7, 1e-3 * fp)
        Jm = np.empty((2, 2))
        for i, e in enumerate(((delta, 0.0), (0.0, delta))):
            lp = ControlPair(_clamp01(ctrl.lA + e[0]), _clamp01(ctrl.lI + e[1]))
            if lp.dist(ctrl) == 0.0:  # pinned at the boundary; probe inward
                lp = ControlPair(_clamp01(ctrl.lA - e[0]), _clamp01(ctrl.lI - e[1]))
            Fp, _, _ = F(lp)
            scale = lp.lA - ctrl.lA if i == 0 else lp.lI - ctrl.lI
            Jm[:, i] = (Fp - Fv) / scale
        try:
            step = np.linalg.solve(Jm, -Fv)
        except np.linalg.LinAlgError:
            break
        improved = False
        t = 1.0
        for _ in range(20):
            cand = ControlPair(_clamp01(ctrl.lA + t * step[0]),
                               _clamp01(ctrl.lI + t * step[1]))
            if cand.dist(ctrl) == 0.0:
                break
            Fc, tc, ac = F(cand)
            fc = float(np.max(np.abs(Fc)))
            if fc < fp:
                ctrl, Fv, traj, adj, fp = cand, Fc, tc, ac, fc
                improved = True
                break
            t *= 0.5
        if not improved:
            break
    cost = _cost_p_eps_from(traj, ctrl, pcfg, eps, anchor)
    return ctrl, traj, adj, fp, cost, nsolves


def _stage_pg(pcfg, eps, params, x0, grid, anchor, ctrl, cfg, tol):
    """Projected gradient with Armijo backtracking on (l_A, l_I)."""
    a1 = pcfg.alpha1
    nsolves = 0
    traj, adj, raw = _stage_sweep(pcfg, eps, params, x0, grid, anchor, ctrl, cfg)
    nsolves += 2
    J = _cost_p_eps_from(traj, ctrl, pcfg, eps, anchor)
    fp_res = raw.dist(ctrl)
    s = 1.0
    for _ in range(cfg.max_pg_iters):
        if fp_res <= tol:
            break
        h = grid.h
        gA = trapezoid(traj.A * (adj.e - adj.q), h) + (a1 + 1.0) * ctrl.lA - anchor.lA
        gI = trapezoid(traj.I * (adj.e - adj.d), h) + (a1 + 1.0) * ctrl.lI - anchor.lI
        accepted = False
        for _ in range(cfg.max_backtracks):
            cand = ControlPair(_clamp01(ctrl.lA - s * gA), _clamp01(ctrl.lI - s * gI))
            dpred = gA * (cand.lA - ctrl.lA) + gI * (cand.lI - ctrl.lI)
            if dpred == 0.0:
                break
            ctraj = simulate(params.with_controls(cand.lA, cand.lI), x0, grid)
            nsolves += 1
            Jc = _cost_p_eps_from(ctraj, cand, pcfg, eps, anchor)
            if Jc <= J + cfg.armijo_c * dpred:
                accepted = True
                break
            s *= 0.5
        if not accepted:
            break
        ctrl, J = cand, Jc
        adj = adjoint_p_eps(ctraj, params, ctrl.lA, ctrl.lI, eps,
                            pcfg.alpha0, pcfg.alpha2, pcfg.Lhat)
        nsolves += 1
        traj = ctraj
        raw = update_controls_eps(traj, adj, a1, anchor)
        fp_res = raw.dist(ctrl)
        s = min(s * 2.0, 1e6)
    return ctrl, traj, adj, fp_res, J, nsolves


def _limit_residual(traj, adj, ctrl, alpha1) -> float:
    """Distance from the limit optimality conditions (divisor alpha1)."""
    h = traj.grid.h
    lA_hat = _clamp01(trapezoid(traj.A * (adj.q - adj.e), h) / alpha1)
    lI_hat = _clamp01(trapezoid(traj.I * (adj.d - adj.e), h) / alpha1)
    return max(abs(ctrl.lA - lA_hat), abs(ctrl.lI - lI_hat))


def solve_p(pcfg: PenaltyConfig, params: ModelParams, x0, grid: Grid,
            init: ControlPair | None = None,
            config: ControlConfig | None = None) -> ControlResult:
    """Penalty continuation over the eps schedule, self-anchored.

    Each stage warm-starts from (and anchors at) the previous solution;
    after the schedule, extra stages at the final eps are run until the
    limit fixed-point residual stops improving or drops below tolerance.
    A schedule that ends above tolerance yields converged=False, not an
    error.
    """
    cfg = config or ControlConfig()
    x0 = _x0_array(x0)
    L0 = float(x0[3])
    if not pcfg.Lhat > L0:
        raise ValidationError("Lhat must exceed L0")
    ctrl = init if init is not None else pcfg.anchor
    anchor = pcfg.anchor
    notes = []
    history = []
    nsolves = 0

    def run_stage(eps, anchor, ctrl, tol=None):
        nonlocal nsolves
        try:
            st = solve_p_eps(pcfg, eps, params, x0, grid, ctrl, cfg, anchor=anchor,
                             tol_fp=tol)
        except StageStallError as err:
            st = err.best
            notes.append(f"stage eps={eps:g} stalled at residual {st.fp_residual:.3e}")
        nsolves += st.forward_solves
        history.append(st)
        return st

    st = None
    mid_tol = max(cfg.tol_fp, 1e-6)  # warm-up stages only seed the next one
    for i, eps in enumerate(pcfg.eps_schedule):
        last = i == len(pcfg.eps_schedule) - 1
        st = run_stage(eps, anchor, ctrl, tol=None if last else mid_tol)
        ctrl = st.controls
        anchor = ctrl

    eps_min = pcfg.eps_schedule[-1]
    limit_res = _limit_residual(st.trajectory, st.adjoint, ctrl, pcfg.alpha1)
    recent = [ctrl]
    no_progress = 0
    for rnd in range(cfg.polish_max):
        if limit_res <= cfg.tol_residual:
            break
        st = run_stage(eps_min, anchor, ctrl)
        new_res = _limit_residual(st.trajectory, st.adjoint, st.controls, pcfg.alpha1)
        no_progress = no_progress + 1 if new_res >= limit_res * (1 - 1e-12) else 0
        limit_res = new_res
        if st.controls.dist(ctrl) == 0.0 or no_progress >= 5:
            ctrl = st.controls
            break
        ctrl = st.controls
        recent.append(ctrl)
        # the anchor chain is a contractive fixed point; Aitken extrapolation
        # of the last three anchors shortcuts its geometric tail
        nxt = ctrl
        if len(recent) >= 3 and rnd % 3 == 2:
            l0, l1, l2 = recent[-3], recent[-2], recent[-1]
            acc = []
            for a, b, c in ((l0.lA, l1.lA, l2.lA), (l0.lI, l1.lI, l2.lI)):
                den = (c - b) - (b - a)
                acc.append(c - (c - b) ** 2 / den if abs(den) > 1e-15 else c)
            nxt = ControlPair(_clamp01(acc[0]), _clamp01(acc[1]))
        anchor = nxt
        ctrl = nxt

    traj, adj = st.trajectory, st.adjoint
    viol = constraint_violation(traj, pcfg.Lhat)
    nu = (pcfg.alpha2 / eps_min) * np.maximum(traj.L - pcfg.Lhat, 0.0)
    pens = [s.penalty_integral for s in history[:len(pcfg.eps_schedule)]]
    for a, b in zip(pens, pens[1:]):
        if b > 1.1 * a + 1e-300:
            notes.append("penalty integral rose by more than 10% between stages")
            break
    _tloc_note(params, pcfg, L0, traj, ctrl, grid, notes)
    converged = (viol <= cfg.tol_constraint and limit_res <= cfg.tol_residual
                 and st.converged)
    cost = _cost_p_from(traj, ctrl, pcfg.alpha0, pcfg.alpha1)
    return ControlResult(ctrl, traj, adj, cost, viol, nu, history, limit_res,
                         converged, notes, nsolves)


def _tloc_note(params, pcfg, L0, traj, ctrl, grid, notes):
    # Horizon diagnostic only; the bound is sufficient, not necessary.
    from .stability import TLocInputs, compute_t_loc
    if not 0.0 < L0 < pcfg.Lhat:
        return
    try:
        y1 = 0.5 * L0
        rho = 0.5 * ((L0 - y1) + (pcfg.Lhat - y1))
        inputs = TLocInputs.from_trajectory(params.with_controls(ctrl.lA, ctrl.lI),
                                            traj, y1, rho, pcfg.Lhat)
        _, _, tloc = compute_t_loc(params, inputs, pcfg.alpha0)
        if grid.T >= tloc:
            notes.append(f"horizon T={grid.T:g} is not below the local bound "
                         f"T_loc={tloc:g}; limit conditions are proven only below it")
    except Exception:
        pass


_CORNERS = (ControlPair(0.0, 0.0), ControlPair(1.0, 0.0),
            ControlPair(0.0, 1.0), ControlPair(1.0, 1.0), ControlPair(0.5, 0.5))


def _solve_one(args):
    pcfg, params, x0, grid, start, cfg = args
    return solve_p(pcfg, params, x0, grid, init=start, config=cfg)


def solve_p_multistart(pcfg: PenaltyConfig, params: ModelParams, x0, grid: Grid,
                       starts=None, config: ControlConfig | None = None,
                       jobs: int = 1):
    """solve_p from the box corners plus center; disagreement is reported.

    Returns (best result, all results, max pairwise control distance).
    """
    starts = tuple(starts) if starts is not None else _CORNERS
    argv = [(pcfg, params, _x0_array(x0), grid, s, config) for s in starts]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_solve_one, argv))
    else:
        results = [_solve_one(a) for a in argv]
    pool_res = [r for r in results if r.converged] or results
    best = min(pool_res, key=lambda r: r.cost)
    spread = max((a.controls.dist(b.controls)
                  for i, a in enumerate(pool_res) for b in pool_res[i + 1:]),
                 default=0.0)
    if spread > 1e-3:
        best.notes.append(f"multi-start solutions disagree by {spread:.3e}")
    return best, results, spread
