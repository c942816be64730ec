"""Single-stance tile relocation under gravity by trajectory optimization.

The stance foot cannot hold the base, limb and tile against gravity with
the hip doing all the work, so the optimizer swings the whole robot about
the foot yaw joint.  This prints the per-joint peaks and the stance-limb
total variation that shows the pivot.  Takes about a minute.
"""
import argparse

from marm.codesign import ACCEPTED_DESIGN, DEFAULT_BATTERY, Budgets, run_scenario
from marm.model import DesignParams, build_model, make_template


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--L1", type=float, default=ACCEPTED_DESIGN.L1)
    ap.add_argument("--L2", type=float, default=ACCEPTED_DESIGN.L2)
    ap.add_argument("--budget-s", type=float, default=300.0)
    args = ap.parse_args()

    model = build_model(make_template(6, "offset"), DesignParams(args.L1, args.L2))
    res = run_scenario(model, DEFAULT_BATTERY[3], budgets=Budgets(trajopt_s=args.budget_s))
    print(f"status: {res.status} {res.message}")
    if not res.feasible and not res.peak_torque:
        return
    for name, peak, lim in zip(res.joint_names, res.peak_torque, res.torque_limits):
        print(f"  {name:18s} peak {peak:7.2f} / {lim:.0f} N m")
    print("stance limb total variation (rad):")
    for name, tv in res.details["stance_total_variation"].items():
        print(f"  {name:18s} {tv:.3f}")
    print("foot yaw dominates:", res.details["pivot"])


if __name__ == "__main__":
    main()
