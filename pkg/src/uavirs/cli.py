"""Batch front-end: run a scenario or sweep an axis, emit CSV/JSON results.

Exit codes: 0 success, 1 infeasible, 2 input error, 3 solver failure.
All numeric output uses 12 significant digits with '.' decimals; reruns on
identical inputs are byte-identical except the wall-time entry in the
summary.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .energy import InfeasibleKinematics, comm_energy, local_energy
from .planner import (
    BASELINES,
    InfeasiblePlan,
    PlannerConfig,
    PlannerError,
    RunResult,
    run_baseline,
    run_planner,
)
from .scenario import (
    FlyingModel1,
    FlyingModel2,
    Scenario,
    ScenarioError,
    load_scenario_file,
    with_elements,
    with_mission_time,
)

METHODS = ("proposed",) + BASELINES

DEFAULT_MODEL2 = FlyingModel2(kappa1=0.0822, kappa2=111.57, gravity=9.8, a_max=5.0, boundary_speed=7.54)


def _fmt(x: float) -> str:
    return "%.12g" % float(x)


def _apply_model(scen: Scenario, model: int | None) -> Scenario:
    if model is None or model == scen.model:
        return scen
    if model == 2:
        return replace(scen, flying=DEFAULT_MODEL2)
    return replace(scen, flying=FlyingModel1(mass=9.75))


def _write_error(out_dir: Path, code: int, message: str, field: str | None = None) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {"exit_code": code, "error": message}
    if field:
        payload["field"] = field
    (out_dir / "error.json").write_text(json.dumps(payload, indent=2) + "\n")


def write_outputs(res: RunResult, scen: Scenario, method: str, out_dir: Path, wall_time: float) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    kin = res.kinematics
    n = scen.num_slots
    ts = scen.slot_length
    if kin.velocities is not None:
        vel = kin.velocities
        acc = np.vstack([kin.accelerations, np.zeros((1, 2))])
    else:
        steps = np.diff(kin.positions, axis=0) / ts
        vel = np.vstack([steps, np.zeros((1, 2))])
        acc = np.vstack([np.diff(vel, axis=0) / ts])
        acc = np.vstack([acc, np.zeros((n + 1 - len(acc), 2))])
    fly = kin.flying_energy(scen)
    lines = ["slot,x,y,vx,vy,ax,ay,flying_energy_j"]
    for i in range(n + 1):
        e = fly[i] if i < n else 0.0
        lines.append(",".join([str(i + 1)] + [_fmt(v) for v in (
            kin.positions[i, 0], kin.positions[i, 1], vel[i, 0], vel[i, 1], acc[i, 0], acc[i, 1], e)]))
    (out_dir / "trajectory.csv").write_text("\n".join(lines) + "\n")

    bits = res.per_slot_secure_bits(scen)
    lines = ["slot,user,power_w,secure_bits"]
    for k in range(scen.num_users):
        for i in range(n):
            lines.append(f"{i + 1},{k + 1},{_fmt(res.plan.powers[k, i])},{_fmt(bits[k, i])}")
    (out_dir / "power.csv").write_text("\n".join(lines) + "\n")

    lines = ["slot,element,theta_rad"]
    for i in range(n):
        for l in range(scen.num_elements):
            lines.append(f"{i + 1},{l + 1},{_fmt(res.phases[i, l])}")
    (out_dir / "phases.csv").write_text("\n".join(lines) + "\n")

    comm = float(np.sum(comm_energy(res.plan.powers, ts, scen.num_users)))
    local = sum(
        float(local_energy(u.switched_capacitance, u.cycles_per_bit, u.input_bits, scen.mission_time, r))
        for u, r in zip(scen.users, res.plan.ratios)
    )
    summary = {
        "method": method,
        "model": scen.model,
        "status": "ok",
        "total_user_energy_j": res.objective,
        "comm_energy_j": comm,
        "local_energy_j": local,
        "uav_energy_j": float(fly.sum()),
        "users": [
            {
                "offload_ratio_local": float(res.plan.ratios[k]),
                "secrecy_target_bits": float(res.plan.targets[k]),
                "achieved_secure_bits": float(res.plan.achieved[k]),
            }
            for k in range(scen.num_users)
        ],
        "outer_iterations": res.outer_iters,
        "objective_trace_j": [float(v) for v in res.trace],
        "feasibility_margins": {k: float(v) for k, v in res.feasibility.items()},
        "wall_time_s": wall_time,
    }
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")


def execute(scen: Scenario, method: str, cfg: PlannerConfig) -> RunResult:
    if method == "proposed":
        return run_planner(scen, cfg)
    return run_baseline(method, scen, cfg)


def _sweep_cell(args):
    text_path, axis, value, method, out_base, tol, max_outer = args
    scen = load_scenario_file(text_path)
    scen = with_mission_time(scen, value) if axis == "T" else with_elements(scen, int(value))
    cfg = PlannerConfig(solver_tol=tol, max_outer=max_outer)
    cell_dir = Path(out_base) / f"{axis}_{_fmt(value)}" / method
    t0 = time.perf_counter()
    try:
        res = execute(scen, method, cfg)
    except (InfeasiblePlan, InfeasibleKinematics) as exc:
        _write_error(cell_dir, 1, str(exc))
        return value, method, None, "infeasible"
    except PlannerError as exc:
        _write_error(cell_dir, 3, str(exc))
        return value, method, None, "solver_failure"
    write_outputs(res, scen, method, cell_dir, time.perf_counter() - t0)
    return value, method, res.objective, "ok"


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="uavirs", description=__doc__)
    ap.add_argument("--scenario", required=True, help="path to a scenario file")
    ap.add_argument("--method", default="proposed", choices=METHODS)
    ap.add_argument("--model", type=int, choices=(1, 2), default=None,
                    help="override the flight cost model (model-2 constants default to the reference set)")
    ap.add_argument("--out", required=True, help="output directory")
    ap.add_argument("--sweep", choices=("T", "L"), default=None)
    ap.add_argument("--values", default=None, help="comma-separated axis values for --sweep")
    ap.add_argument("--methods", default=None,
                    help="comma-separated methods for --sweep (default: the --method)")
    ap.add_argument("--tol", type=float, default=1e-6, help="subproblem solver tolerance")
    ap.add_argument("--max-outer", type=int, default=50)
    ap.add_argument("--jobs", type=int, default=1, help="concurrent sweep cells")
    args = ap.parse_args(argv)

    out_dir = Path(args.out)
    try:
        scen = load_scenario_file(args.scenario)
        scen = _apply_model(scen, args.model)
    except ScenarioError as exc:
        _write_error(out_dir, 2, str(exc), field=exc.field)
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        _write_error(out_dir, 2, str(exc))
        print(f"input error: {exc}", file=sys.stderr)
        return 2

    cfg = PlannerConfig(solver_tol=args.tol, max_outer=args.max_outer)

    if args.sweep:
        if not args.values:
            _write_error(out_dir, 2, "--sweep requires --values")
            print("input error: --sweep requires --values", file=sys.stderr)
            return 2
        try:
            values = [float(v) for v in args.values.split(",") if v.strip()]
        except ValueError:
            _write_error(out_dir, 2, f"bad --values list: {args.values!r}")
            return 2
        if not values or values != sorted(values):
            _write_error(out_dir, 2, "--values must be a nonempty ascending list")
            return 2
        methods = [m.strip() for m in (args.methods or args.method).split(",")]
        for m in methods:
            if m not in METHODS:
                _write_error(out_dir, 2, f"unknown method {m!r}")
                return 2
        # model override is baked into a temporary scenario file for workers
        scen_path = args.scenario
        if args.model is not None and args.model != load_scenario_file(args.scenario).model:
            from .scenario import emit_scenario

            out_dir.mkdir(parents=True, exist_ok=True)
            scen_path = str(out_dir / "scenario_effective.scn")
            Path(scen_path).write_text(emit_scenario(scen))
        cells = [
            (scen_path, args.sweep, v, m, str(out_dir), args.tol, args.max_outer)
            for v in values for m in methods
        ]
        if args.jobs > 1:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                rows = list(pool.map(_sweep_cell, cells))
        else:
            rows = [_sweep_cell(c) for c in cells]
        out_dir.mkdir(parents=True, exist_ok=True)
        lines = ["axis,value,method,total_user_energy_j,status"]
        for value, method, energy, status in rows:
            e = _fmt(energy) if energy is not None else ""
            lines.append(f"{args.sweep},{_fmt(value)},{method},{e},{status}")
        (out_dir / "sweep.csv").write_text("\n".join(lines) + "\n")
        return 0

    t0 = time.perf_counter()
    try:
        res = execute(scen, args.method, cfg)
    except (InfeasiblePlan, InfeasibleKinematics) as exc:
        _write_error(out_dir, 1, str(exc))
        print(f"infeasible: {exc}", file=sys.stderr)
        return 1
    except PlannerError as exc:
        _write_error(out_dir, 3, str(exc))
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3
    write_outputs(res, scen, args.method, out_dir, time.perf_counter() - t0)
    print(f"{args.method}: total user energy {_fmt(res.objective)} J -> {out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
