"""Batch command-line front end: simulate | identify | control | stability | synth.

Reads one scenario JSON, applies --set overrides, runs the task and writes
a trajectory CSV plus a summary JSON into the output directory.  Exit
codes: 0 converged/ok, 2 finished but not converged, 1 hard error.

The summary's "runtime" field is a deterministic work measure (number of
five-component ODE sweeps performed), so identical invocations with the
same seed produce byte-identical output files; wall-clock time is printed
to the console only.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import control as ctl
from . import identify as idf
from . import stability as stab
from .errors import SailrError, StallError, ValidationError
from .integrate import Grid, trapezoid
from .model import simulate, total_population
from .scenario import (Scenario, scenario_from_dict, synth_observations,
                       write_adjoint_csv, write_series_csv, write_summary_json,
                       write_trajectory_csv)


def _parse_args(argv):
    parser = argparse.ArgumentParser(prog="sailr", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="task", required=True)
    for task in ("simulate", "identify", "control", "stability", "synth"):
        sp = sub.add_parser(task)
        sp.add_argument("--scenario", required=True, help="scenario JSON path")
        sp.add_argument("--out", default=None,
                        help="output directory (default: $SAILR_OUT or '.')")
        sp.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="override a scenario field "
                        "(dotted path, e.g. grid.M=2000); repeatable")
        sp.add_argument("--seed", type=int, default=None, help="override the scenario seed")
        sp.add_argument("--jobs", type=int, default=1,
                        help="worker processes for multi-start runs")
        sp.add_argument("--quiet", action="store_true", help="suppress the console summary")
    return parser.parse_args(argv)


def _apply_override(doc: dict, item: str):
    if "=" not in item:
        raise ValidationError([f"override '{item}' is not KEY=VALUE"])
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = doc
    parts = key.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ValidationError([f"override path '{key}' crosses a non-object field"])
    node[parts[-1]] = value


def _load(args) -> Scenario:
    try:
        with open(args.scenario, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ValidationError([f"scenario file not found: {args.scenario}"])
    except json.JSONDecodeError as err:
        raise ValidationError([f"parse error at line {err.lineno}, column {err.colno}: {err.msg}"])
    if not isinstance(doc, dict):
        raise ValidationError(["scenario document must be a JSON object"])
    doc["task"] = args.task
    if args.seed is not None:
        doc["seed"] = args.seed
    for item in args.overrides:
        _apply_override(doc, item)
    return scenario_from_dict(doc)


def _summary_skeleton(task: str, seed: int) -> dict:
    return {"task": task, "cost": None, "cost_history": [], "residuals": {},
            "controls": None, "candidate": None, "R0": None, "S_bar": None,
            "constraint_violation": None, "seed": seed, "runtime": 0}


def _try_r0(summary: dict, params):
    try:
        summary["R0"] = stab.r0(params)
        summary["S_bar"] = stab.s_threshold(params)
    except (ValidationError, SailrError):
        pass  # time-varying coefficients: no scalar reproduction number


def _run_simulate(s: Scenario, outdir: Path, summary: dict, jobs: int = 1):
    traj = simulate(s.params, s.x0, s.grid)
    write_trajectory_csv(traj, outdir / "trajectory.csv")
    drift = float(np.max(np.abs(traj.states.sum(axis=1) - total_population(s.x0))))
    summary["residuals"] = {"conservation_drift": drift}
    summary["runtime"] = 1
    _try_r0(summary, s.params)
    return 0


def _run_identify(s: Scenario, outdir: Path, summary: dict, jobs: int = 1):
    cfg_kw = {k: s.solver[k] for k in ("tol", "max_iters", "beta_init") if k in s.solver}
    cfg = idf.IdentConfig(**cfg_kw)
    alpha0, alpha1 = s.weights
    status = 0
    try:
        res = idf.solve_p0(s.observations, s.params, s.grid, alpha0, alpha1, cfg)
    except StallError as err:
        res = err.best
        summary["notes"] = [str(err)]
        status = 2
    if not res.converged:
        status = 2
    write_trajectory_csv(res.trajectory, outdir / "trajectory.csv")
    write_adjoint_csv(res.adjoint, outdir / "adjoint.csv")
    write_series_csv(outdir / "beta_I.csv", "beta_I", s.grid,
                     res.candidate.beta_I(s.grid.points()))
    n0 = idf.n0_of(s.params, s.observations)
    mis = ((res.trajectory.L[-1] - s.observations.LT) ** 2
           + (res.trajectory.R[-1] - s.observations.RT) ** 2)
    summary["cost"] = res.cost
    summary["cost_history"] = list(res.cost_history)
    summary["residuals"] = {"optimality": res.optimality_residual,
                            "terminal_mismatch_sq": float(mis)}
    summary["candidate"] = {"A0": res.candidate.A0, "I0": res.candidate.I0,
                            "S0": res.candidate.s0(n0), "beta_I_file": "beta_I.csv"}
    summary["iterations"] = res.iterations
    summary["converged"] = res.converged
    summary["runtime"] = res.forward_solves
    # reproduction number at the time-average of the recovered rate
    beta_avg = trapezoid(res.candidate.beta_I(s.grid.points()), s.grid.h) / s.grid.T
    _try_r0(summary, s.params.replace(beta_I=beta_avg))
    return status


def _run_control(s: Scenario, outdir: Path, summary: dict, jobs: int = 1):
    keys = ("theta", "tol_fp", "max_sweeps", "tol_constraint", "tol_residual",
            "polish_max", "max_pg_iters")
    cfg = ctl.ControlConfig(**{k: s.solver[k] for k in keys if k in s.solver})
    init = None
    if "init" in s.solver:
        init = ctl.ControlPair(float(s.solver["init"]["lA"]), float(s.solver["init"]["lI"]))
    if s.solver.get("multistart"):
        res, _, spread = ctl.solve_p_multistart(s.penalty, s.params, s.x0, s.grid,
                                                config=cfg, jobs=jobs)
        res.notes.append(f"multistart spread {spread:.3e}")
    else:
        res = ctl.solve_p(s.penalty, s.params, s.x0, s.grid, init=init, config=cfg)
    write_trajectory_csv(res.trajectory, outdir / "trajectory.csv")
    write_adjoint_csv(res.adjoint, outdir / "adjoint.csv")
    write_series_csv(outdir / "multiplier.csv", "nu", s.grid, res.multiplier_diag)
    summary["cost"] = res.cost
    summary["cost_history"] = [st.cost_eps for st in res.per_eps_history]
    summary["residuals"] = {"limit_fixed_point": res.limit_residual,
                            "stage_fixed_point": res.per_eps_history[-1].fp_residual}
    summary["multiplier_l1_history"] = [st.multiplier_l1 for st in res.per_eps_history]
    summary["controls"] = {"lA": res.controls.lA, "lI": res.controls.lI}
    summary["constraint_violation"] = res.constraint_violation
    summary["converged"] = res.converged
    summary["notes"] = list(res.notes)
    summary["runtime"] = res.forward_solves
    _try_r0(summary, s.params.with_controls(res.controls.lA, res.controls.lI))
    return 0 if res.converged else 2


def _run_stability(s: Scenario, outdir: Path, summary: dict, jobs: int = 1):
    opts = s.stability
    report = stab.simulate_extinction(s.params, s.x0,
                                      horizon=float(opts.get("horizon", 100.0)),
                                      tol=float(opts.get("tol", 1e-8)),
                                      h=float(opts.get("h", 1e-2)))
    first = Grid(0.0, float(opts.get("horizon", 100.0)),
                 max(1, round(float(opts.get("horizon", 100.0)) / float(opts.get("h", 1e-2)))))
    write_trajectory_csv(simulate(s.params, s.x0, first), outdir / "trajectory.csv")
    summary["R0"] = report.R0
    summary["S_bar"] = report.S_bar
    summary["residuals"] = {"infected_mass": float(sum(report.final_state[1:4]))}
    summary["stability"] = {
        "S_tilde_inf": report.S_tilde_inf, "extinction": report.extinction,
        "regime": report.regime, "hurwitz": report.hurwitz,
        "eigenvalues_re": [float(z.real) for z in report.eigenvalues],
        "eigenvalues_im": [float(z.imag) for z in report.eigenvalues],
        "horizon": report.horizon, "monotone_S": report.monotone_S}
    summary["runtime"] = report.segments + 1
    return 0 if report.extinction else 2


def _run_synth(s: Scenario, outdir: Path, summary: dict, jobs: int = 1):
    obs, traj = synth_observations(s.synth)
    write_trajectory_csv(traj, outdir / "trajectory.csv")
    summary["observations"] = {"L0": obs.L0, "R0": obs.R0, "LT": obs.LT,
                               "RT": obs.RT, "T": obs.T}
    summary["residuals"] = {}
    summary["runtime"] = 1
    _try_r0(summary, s.params.replace(beta_I=s.synth.beta_I_true))
    return 0


_RUNNERS = {"simulate": _run_simulate, "identify": _run_identify,
            "control": _run_control, "stability": _run_stability, "synth": _run_synth}


def run(args) -> int:
    t_start = time.perf_counter()
    stage = "load"
    try:
        s = _load(args)
        outdir = Path(args.out or os.environ.get("SAILR_OUT") or ".")
        outdir.mkdir(parents=True, exist_ok=True)
        stage = s.task
        summary = _summary_skeleton(s.task, s.seed)
        status = _RUNNERS[s.task](s, outdir, summary, jobs=args.jobs)
        stage = "export"
        write_summary_json(summary, outdir / "summary.json")
    except SailrError as err:
        msgs = getattr(err, "errors", [str(err)])
        for m in msgs:
            print(f"sailr {stage}: error: {m}", file=sys.stderr)
        return 1
    if not args.quiet:
        _print_summary(s, summary, status, time.perf_counter() - t_start, outdir)
    return status


def _print_summary(s: Scenario, summary: dict, status: int, wall: float, outdir: Path):
    print(f"task       : {summary['task']}  ({s.name or Path(outdir).name})")
    if summary.get("cost") is not None:
        print(f"cost       : {summary['cost']:.6e}")
    for key, val in summary.get("residuals", {}).items():
        print(f"residual   : {key} = {val:.3e}")
    if summary.get("R0") is not None:
        print(f"R0 / S_bar : {summary['R0']:.6g} / {summary['S_bar']:.6g}")
    if summary.get("stability"):
        st = summary["stability"]
        print(f"regime     : {st['regime']}  (S_inf={st['S_tilde_inf']:.6g}, "
              f"hurwitz={st['hurwitz']})")
    if summary.get("controls") is not None:
        print(f"controls   : lA={summary['controls']['lA']:.6g} "
              f"lI={summary['controls']['lI']:.6g}")
    if summary.get("candidate") is not None:
        c = summary["candidate"]
        print(f"candidate  : A0={c['A0']:.6g} I0={c['I0']:.6g} S0={c['S0']:.6g}")
    if summary.get("constraint_violation") is not None:
        print(f"violation  : {summary['constraint_violation']:.3e}")
    for note in summary.get("notes", []):
        print(f"note       : {note}")
    print(f"exit       : {status}   wall {wall:.2f}s   outputs in {outdir}")


def main(argv=None) -> int:
    code = run(_parse_args(argv))
    if argv is None:
        sys.exit(code)
    return code
