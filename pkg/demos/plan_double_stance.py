"""Walk through one double-stance step: two feet latched, the third moved to the next socket.

Prints the planned path, re-validates it densely, replays it through the
inverse-dynamics QP and writes the torque series next to the report.
"""
import argparse

from marm.codesign import (ACCEPTED_DESIGN, DEFAULT_BATTERY, Budgets, FeasibilityReport, _geometry, _scenario_model,
                           emit_report, run_scenario)
from marm.collision import socket_world
from marm.model import build_model, make_template
from marm.planner import plan, scenario_problem, validate_path


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--tile", action="store_true", help="carry the tile on the moving limb")
    ap.add_argument("--out", default="results/double_stance")
    args = ap.parse_args()

    scenario = DEFAULT_BATTERY[1 if args.tile else 0]
    model = build_model(make_template(6, "offset"), ACCEPTED_DESIGN)

    # the planner on its own: a path on the two-foot manifold
    m = _scenario_model(model, scenario)
    problem = scenario_problem(m, _geometry(m, scenario), socket_world(scenario.socket_layout), seed=args.seed)
    path = plan(problem)
    worst = max(max(r) for r in path.residuals)
    print(f"{len(path)} waypoints, worst manifold residual {worst:.1e}")
    print("dense re-validation:", validate_path(problem, path) or "clean")

    # the full pipeline: gate, plan, retime, replay through inverse dynamics
    res = run_scenario(model, scenario, args.seed, Budgets())
    for name, peak, lim in zip(res.joint_names, res.peak_torque, res.torque_limits):
        print(f"  {name:18s} peak {peak:7.2f} / {lim:.0f} N m")
    report = FeasibilityReport(model.template.name, model.params, args.seed, Budgets(), [res])
    for p in emit_report(report, args.out, "json"):
        print("wrote", p)


if __name__ == "__main__":
    main()
