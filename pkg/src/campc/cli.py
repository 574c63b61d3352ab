"""Command-line benchmark harness: run, sweep, check.

Scenario files are JSON with five sections (system, constraints,
actuators, mpc, run); unknown keys are rejected.  All numeric CSV output
is emitted in full double precision with locale-independent decimal
points.  Exit codes: 0 success, 1 usage or schema error, 2 infeasible,
3 internal numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import gc
import json
import os
import sys

import numpy as np

try:
    from threadpoolctl import threadpool_limits
except ImportError:  # timing still works, just noisier
    from contextlib import nullcontext as threadpool_limits

from .controller import CampcController, FullMpcController, run as run_loop
from .errors import CampcError, InfeasibleError, NumericalError, ScenarioError
from .hyperthermia import (build_scenario, case_tubes, validate_scenario,
                           forward_tube_check)
from .lti import PolyhedralSet
from .mpc import MpcProblem, condense

RUN_COLUMNS = ["n", "step", "presolve_time", "qp_time", "total_time",
               "retained_fraction", "max_input_delta"]
SWEEP_COLUMNS = ["n", "mode", "steps", "max_total_time", "max_presolve_time",
                 "max_qp_time"]

_gauss_term = {
    "type": "object",
    "additionalProperties": False,
    "required": ["amp", "center", "width"],
    "properties": {
        "amp": {"type": "number", "exclusiveMinimum": 0},
        "center": {"type": "number", "minimum": 0, "maximum": 1},
        "width": {"type": "number", "exclusiveMinimum": 0},
    },
}

SCENARIO_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["system", "constraints", "actuators", "mpc", "run"],
    "properties": {
        "system": {
            "type": "object",
            "additionalProperties": False,
            "required": ["n", "dt", "alpha", "beta", "gamma"],
            "properties": {
                "n": {"type": "integer", "minimum": 3},
                "dt": {"type": "number", "exclusiveMinimum": 0},
                "alpha": {"type": "number", "exclusiveMinimum": 0},
                "beta": {"type": "number", "exclusiveMinimum": 0},
                "gamma": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "constraints": {
            "type": "object",
            "additionalProperties": False,
            "required": ["healthy_limit", "tumor_limit", "tumor_interval"],
            "properties": {
                "healthy_limit": {"type": "number", "exclusiveMinimum": 0},
                "tumor_limit": {"type": "number", "exclusiveMinimum": 0},
                "tumor_interval": {
                    "type": "array", "items": {"type": "number", "minimum": 0,
                                               "maximum": 1},
                    "minItems": 2, "maxItems": 2,
                },
            },
        },
        "actuators": {
            "type": "object",
            "additionalProperties": False,
            "required": ["b1", "b2"],
            "properties": {
                "b1": {"type": "array", "items": _gauss_term, "minItems": 1},
                "b2": {"type": "array", "items": _gauss_term, "minItems": 1},
            },
        },
        "mpc": {
            "type": "object",
            "additionalProperties": False,
            "required": ["N"],
            "properties": {
                "N": {"type": "integer", "minimum": 1},
                "weights": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "q": {"type": "number", "exclusiveMinimum": 0},
                        "r": {"type": "number", "exclusiveMinimum": 0},
                        "p": {"type": "number", "exclusiveMinimum": 0},
                    },
                },
                "tol_kkt": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "run": {
            "type": "object",
            "additionalProperties": False,
            "required": ["steps"],
            "properties": {
                "steps": {"type": "integer", "minimum": 0},
                "oracle": {"type": "boolean"},
                "seed": {"type": "integer", "minimum": 0},
            },
        },
    },
}


def load_scenario_file(path):
    """Parse and schema-validate a scenario file."""
    import jsonschema

    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"scenario file is not valid JSON: {exc}") from exc
    try:
        jsonschema.validate(cfg, SCENARIO_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ScenarioError(f"scenario schema violation: {exc.message}") from exc
    t0, t1 = cfg["constraints"]["tumor_interval"]
    if not t0 < t1:
        raise ScenarioError("tumor_interval must be increasing")
    return cfg


def build_bundle(cfg, n_override=None):
    """Scenario plus condensed MPC data and tubes, ready to simulate."""
    syscfg = dict(cfg["system"])
    if n_override is not None:
        syscfg["n"] = int(n_override)
    concfg = cfg["constraints"]
    scn = build_scenario(
        n=syscfg["n"], dt=syscfg["dt"], alpha=syscfg["alpha"],
        beta=syscfg["beta"], gamma=syscfg["gamma"],
        tumor=tuple(concfg["tumor_interval"]),
        healthy_limit=concfg["healthy_limit"],
        tumor_limit=concfg["tumor_limit"],
        profiles=cfg["actuators"])
    mpccfg = cfg["mpc"]
    w = mpccfg.get("weights", {})
    N = mpccfg["N"]
    problem = MpcProblem(
        sys=scn.sys,
        Xset=PolyhedralSet.from_upper_bounds(scn.Tmax),
        Uset=PolyhedralSet.box(np.zeros(2), np.ones(2)),
        XT=PolyhedralSet.from_upper_bounds(scn.Tterminal),
        N=N,
        Q=w.get("q", 1.0), R=w.get("r", 1.0), P=w.get("p", w.get("q", 1.0)),
        xref=scn.xref, uref=scn.uref)
    cq = condense(problem)
    tubes = case_tubes(scn.sys, scn.Tterminal, N)
    tol = mpccfg.get("tol_kkt", 1e-8)
    return scn, cq, tubes, tol


def _fmt(v):
    if v is None:
        return ""
    return repr(float(v))


def _open_out(path):
    return open(path, "w", newline="") if path else sys.stdout


def _run_one(bundle, mode, steps, oracle, repeats=1, warmup=0):
    """Closed-loop run(s) of one mode; returns (trace, per-step time arrays).

    With repeats > 1 the run is repeated from the same start and per-step
    times are combined elementwise by the minimum, suppressing one-off
    scheduler noise; the trace itself is identical across repeats because
    the control loop is deterministic.
    """
    scn, cq, tubes, tol = bundle
    if mode == "campc":
        ctrl = CampcController(cq, tubes, tol_kkt=tol,
                               history_budget=max(steps + 8, 64))
    else:
        ctrl = FullMpcController(cq, tol_kkt=tol)
    x0 = np.zeros(scn.n)
    trace = None
    times = None
    gc_was_enabled = gc.isenabled()
    try:
        # Timed loops run on one BLAS thread: thread wake-up jitter on the
        # large matvecs otherwise dominates per-step maxima.
        with threadpool_limits(1):
            if warmup:
                run_loop(ctrl, x0, min(warmup, steps))
            for _ in range(max(1, repeats)):
                gc.collect()
                gc.disable()
                trace = run_loop(ctrl, x0, steps, oracle=oracle)
                gc.enable()
                t = np.array([[r.timings["presolve"], r.timings["qp_solve"],
                               r.timings["total"]] for r in trace.records])
                times = t if times is None else np.minimum(times, t)
    finally:
        if gc_was_enabled and not gc.isenabled():
            gc.enable()
    return scn, trace, times


def cmd_run(args):
    cfg = load_scenario_file(args.scenario)
    steps = cfg["run"]["steps"] if args.steps is None else args.steps
    oracle = bool(cfg["run"].get("oracle", False) or args.oracle)
    bundle = build_bundle(cfg)
    scn, trace, times = _run_one(bundle, "campc", steps, oracle)
    out = _open_out(args.out)
    try:
        w = csv.writer(out)
        w.writerow(RUN_COLUMNS)
        for i, r in enumerate(trace.records):
            w.writerow([scn.n, r.k, _fmt(times[i, 0]), _fmt(times[i, 1]),
                        _fmt(times[i, 2]), _fmt(r.retained_fraction),
                        _fmt(r.oracle_delta)])
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def _sweep_worker(payload):
    """One sweep entry: build the scenario once, time each requested mode.

    The full mode runs first so its dense offline matrices can be released
    before the adaptive mode allocates.
    """
    cfg, n, modes, steps, repeats = payload
    bundle = build_bundle(cfg, n_override=n)
    cq = bundle[1]
    rows = []
    for mode in modes:
        _, trace, times = _run_one(bundle, mode, steps, oracle=False,
                                   repeats=repeats, warmup=2)
        rows.append({
            "n": n,
            "mode": mode,
            "steps": steps,
            "max_total_time": float(times[:, 2].max(initial=0.0)),
            "max_presolve_time": float(times[:, 0].max(initial=0.0)),
            "max_qp_time": float(times[:, 1].max(initial=0.0)),
        })
        if mode == "full":
            cq.release_dense()
            gc.collect()
    return rows


def cmd_sweep(args):
    cfg = load_scenario_file(args.scenario)
    try:
        ns = [int(tok) for tok in args.n.split(",") if tok.strip()]
    except ValueError as exc:
        raise ScenarioError(f"bad --n list: {exc}") from exc
    if not ns:
        raise ScenarioError("--n must list at least one grid size")
    steps = cfg["run"]["steps"] if args.steps is None else args.steps
    modes = ["campc", "full"] if args.mode == "both" else [args.mode]
    # full first within an entry so its dense offline data is released
    # before the adaptive run allocates.
    modes.sort(reverse=True)  # ["full", "campc"] under "both"
    rows = []
    if args.serial or len(ns) == 1:
        for n in ns:
            rows.extend(_sweep_worker((cfg, n, modes, steps, args.repeats)))
    else:
        from concurrent.futures import ProcessPoolExecutor

        workers = min(len(ns), os.cpu_count() or 1)
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for part in pool.map(_sweep_worker,
                                 [(cfg, n, modes, steps, args.repeats) for n in ns]):
                rows.extend(part)
    rows.sort(key=lambda r: (r["n"], r["mode"]))
    out = _open_out(args.out)
    try:
        w = csv.writer(out)
        w.writerow(SWEEP_COLUMNS)
        for r in rows:
            w.writerow([r["n"], r["mode"], r["steps"], _fmt(r["max_total_time"]),
                        _fmt(r["max_presolve_time"]), _fmt(r["max_qp_time"])])
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def cmd_check(args):
    cfg = load_scenario_file(args.scenario)
    scn, cq, tubes, _ = build_bundle(cfg)
    checks = validate_scenario(scn)
    seed = cfg["run"].get("seed", 0)
    ok_mc, detail = forward_tube_check(scn.sys, tubes, samples=200, seed=seed)
    checks.append(("forward_tube_monte_carlo", ok_mc, detail))
    failed = 0
    for name, ok, detail in checks:
        print(f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else ""))
        if not ok:
            failed += 1
    if failed:
        print(f"{failed} check(s) failed", file=sys.stderr)
        return 1
    return 0


def make_parser():
    ap = argparse.ArgumentParser(
        prog="campc",
        description="Constraint-adaptive MPC benchmark harness")
    sub = ap.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="closed-loop run, one CSV row per step")
    p_run.add_argument("scenario")
    p_run.add_argument("--steps", type=int, default=None)
    p_run.add_argument("--oracle", action="store_true",
                       help="co-run the full MPC and record input deltas")
    p_run.add_argument("--out", default=None, help="CSV path (default stdout)")
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="timing sweep over grid sizes")
    p_sweep.add_argument("scenario")
    p_sweep.add_argument("--n", required=True, help="comma-separated grid sizes")
    p_sweep.add_argument("--mode", choices=["campc", "full", "both"],
                         default="both")
    p_sweep.add_argument("--steps", type=int, default=None)
    p_sweep.add_argument("--serial", action="store_true",
                         help="run entries sequentially for clean timing")
    p_sweep.add_argument("--repeats", type=int, default=1,
                         help="repeat runs, keep per-step minimum times")
    p_sweep.add_argument("--out", default=None, help="CSV path (default stdout)")
    p_sweep.set_defaults(func=cmd_sweep)

    p_check = sub.add_parser("check", help="validate a scenario's invariants")
    p_check.add_argument("scenario")
    p_check.set_defaults(func=cmd_check)
    return ap


def main(argv=None):
    ap = make_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except CampcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
