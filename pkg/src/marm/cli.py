"""Command line front end: ``marm <subcommand>``.

Exit codes: 0 success, 2 no feasible design (or the motion failed its
checks), 3 invalid input, 4 budget exceeded.
"""
import argparse
import json
import os
import sys
from dataclasses import replace

from .codesign import (DEFAULT_BATTERY, Budgets, FeasibilityReport, Scenario, design_grid, emit_report, grid_range,
                       load_report, run_scenario, sweep, template_by_name, _geometry, _scenario_model)
from .dynamics import evaluate_trajectory
from .errors import MarmError, SchemaViolation
from .model import MASS_SETS, DesignParams, apply_mass_set, build_model
from .model_io import load_model, save_model
from .trajectory import read_trajectory_csv, write_manifest, write_trajectory_csv

EXIT_OK, EXIT_INFEASIBLE, EXIT_INPUT, EXIT_BUDGET = 0, 2, 3, 4


class InputError(Exception):
    pass


def _read_model(path):
    if path is None:
        raise InputError("--model is required")
    if not os.path.isfile(path):
        raise InputError(f"model file not found: {path}")
    return load_model(path)


def _read_scenario(args, engine=None):
    if args.scenario is None:
        raise InputError("--scenario is required")
    if not os.path.isfile(args.scenario):
        raise InputError(f"scenario file not found: {args.scenario}")
    with open(args.scenario) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaViolation("scenario", f"not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise SchemaViolation("scenario", "expected an object")
    if args.gravity is not None:
        doc["gravity"] = args.gravity
    if engine is not None:
        doc["motion_engine"] = engine
    return Scenario.from_dict(doc)


def _budgets(args):
    if args.budget_s is None:
        return Budgets()
    if not args.budget_s > 0:
        raise InputError("--budget-s must be positive")
    return Budgets(planning_s=args.budget_s, trajopt_s=args.budget_s)


def _range(text, name):
    """``lo:hi[:step]`` or a comma separated list."""
    try:
        if ":" in text:
            parts = [float(x) for x in text.split(":")]
            if len(parts) not in (2, 3) or parts[1] < parts[0]:
                raise ValueError
            return grid_range(*parts)
        return [float(x) for x in text.split(",")]
    except ValueError:
        raise InputError(f"--{name}: expected lo:hi[:step] or a comma list, got {text!r}") from None


def _status_code(statuses):
    if all(s == "feasible" for s in statuses):
        return EXIT_OK
    if "timeout" in statuses:
        return EXIT_BUDGET
    return EXIT_INFEASIBLE


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate(args):
    model = build_model(template_by_name(args.template), DesignParams(args.L1, args.L2))
    if args.mass_set:
        model = apply_mass_set(model, args.mass_set)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "model.json")
    save_model(model, path)
    print(path)
    return EXIT_OK


def _run_motion(args, engine):
    model = _read_model(args.model)
    scenario = _read_scenario(args, engine)
    res = run_scenario(model, scenario, args.seed, _budgets(args))
    report = FeasibilityReport(model.template.name, model.params, args.seed, _budgets(args), [res])
    written = emit_report(report, args.out, args.format)
    if res.trajectory is not None:
        path = os.path.join(args.out, "trajectory.csv")
        write_trajectory_csv(res.trajectory, path, model.joint_names)
        written.append(path)
    write_manifest(os.path.join(args.out, "manifest.json"), command=args.command, seed=args.seed,
                   scenario=scenario.to_dict(), status=res.status)
    print(f"{scenario.name}: {res.status}" + (f" ({res.message})" if res.message else ""))
    return _status_code([res.status])


def cmd_plan(args):
    return _run_motion(args, "planner")


def cmd_optimize(args):
    return _run_motion(args, "trajopt")


def cmd_evaluate(args):
    model = _read_model(args.model)
    scenario = _read_scenario(args)
    if args.trajectory is None or not os.path.isfile(args.trajectory):
        raise InputError(f"trajectory file not found: {args.trajectory}")
    try:
        traj = read_trajectory_csv(args.trajectory)
    except (ValueError, IndexError) as exc:
        raise InputError(f"unreadable trajectory: {exc}") from None
    model = _scenario_model(model, scenario)
    if traj.q.shape[1] != model.nq:
        raise InputError(f"trajectory has {traj.q.shape[1]} coordinates, model needs {model.nq}")
    contacts = list(_geometry(model, scenario).stance)
    rep = evaluate_trajectory(model, traj, contacts, gravity=scenario.g)
    os.makedirs(args.out, exist_ok=True)
    doc = {
        "scenario": scenario.name,
        "joint_names": list(rep.joint_names),
        "peak_torque": rep.peak_torque().tolist(),
        "torque_limits": model.torque_limits.tolist(),
        "violations": rep.violations,
    }
    with open(os.path.join(args.out, "load_report.json"), "w") as fh:
        json.dump(doc, fh, indent=2, default=float)
        fh.write("\n")
    print(f"{scenario.name}: {len(rep.violations)} limit violations")
    return EXIT_OK if not rep.violations else EXIT_INFEASIBLE


def cmd_sweep(args):
    template = template_by_name(args.template)
    grid = design_grid(_range(args.L1, "L1"), _range(args.L2, "L2"))
    scenarios = DEFAULT_BATTERY
    if args.scenario:
        paths = args.scenario
        for p in paths:
            if not os.path.isfile(p):
                raise InputError(f"scenario file not found: {p}")
        scenarios = [Scenario.load(p) for p in paths]
        if args.gravity is not None:
            scenarios = [replace(s, gravity=args.gravity) for s in scenarios]
    res = sweep(template, grid, scenarios, args.seed, _budgets(args), workers=args.workers)
    emit_report(res, args.out, args.format)
    if res.selected is not None:
        print(f"selected L1={res.selected.L1} L2={res.selected.L2}")
        return EXIT_OK
    statuses = [e.status for r in res.reports for e in r.entries]
    print("no feasible design")
    return EXIT_BUDGET if "timeout" in statuses else EXIT_INFEASIBLE


def cmd_report(args):
    if args.input is None or not os.path.isfile(args.input):
        raise InputError(f"report file not found: {args.input}")
    with open(args.input) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaViolation("report", f"not valid JSON: {exc}") from None
    obj = load_report(doc)
    for path in emit_report(obj, args.out, args.format):
        print(path)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser():
    ap = argparse.ArgumentParser(prog="marm", description="Three-limb robot design sweeps and motion checks.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, scenario=True, many=False):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=".")
        p.add_argument("--format", choices=("json", "csv"), default="json")
        p.add_argument("--gravity", choices=("on", "off"), default=None, help="override the scenario's gravity")
        p.add_argument("--budget-s", type=float, default=None, help="planning / optimization time budget")
        if scenario:
            p.add_argument("--scenario", action="append" if many else "store", default=None)

    g = sub.add_parser("generate", help="template + lengths -> model file")
    g.add_argument("--template", default="6dof_offset")
    g.add_argument("--L1", type=float, required=True)
    g.add_argument("--L2", type=float, required=True)
    g.add_argument("--mass-set", choices=sorted(MASS_SETS), default=None)
    g.add_argument("--out", default=".")
    g.set_defaults(func=cmd_generate)

    for name, func, help_ in (("plan", cmd_plan, "sampling planner on one scenario"),
                              ("optimize", cmd_optimize, "trajectory optimization on one scenario")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--model")
        common(p)
        p.set_defaults(func=func)

    e = sub.add_parser("evaluate", help="trajectory -> load report")
    e.add_argument("--model")
    e.add_argument("--trajectory")
    common(e)
    e.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("sweep", help="grid of lengths x scenario battery -> feasibility report")
    s.add_argument("--template", default="6dof_offset")
    s.add_argument("--L1", default="0.45:0.5:0.025")
    s.add_argument("--L2", default="0.45:0.5:0.025")
    s.add_argument("--workers", type=int, default=1)
    common(s, many=True)
    s.set_defaults(func=cmd_sweep)

    r = sub.add_parser("report", help="re-emit a saved report (validates it)")
    r.add_argument("--in", dest="input")
    r.add_argument("--out", default=".")
    r.add_argument("--format", choices=("json", "csv"), default="json")
    r.set_defaults(func=cmd_report)
    return ap


def main(argv=None):
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:  # argparse reports bad usage with code 2; that is invalid input here
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    try:
        return args.func(args)
    except (InputError, MarmError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
