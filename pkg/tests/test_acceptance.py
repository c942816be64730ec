"""End-to-end acceptance checks, each with its tolerance and wall-clock budget.

Every test records one PASS/FAIL line that is printed in the terminal summary.
"""
import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, TEMPLATES, random_configuration
from oracles import point_jacobian_fd
from marm.codesign import (ACCEPTED_DESIGN, DEFAULT_BATTERY, Budgets, _geometry, _scenario_model, design_grid,
                           emit_report, run_scenario, sweep)
from marm.collision import socket_world
from marm.dynamics import (Contact, WrenchLimits, cone_rotation, gravity_torque, potential_energy, solve_id_qp)
from marm.errors import NoConvergence
from marm.kinematics import (IkOptions, ankle_to_tcp, fk, home_configuration, ik_solve, jacobian, limb_mask,
                             limb_root_path_to_world, manipulability_profile, nominal_path, planar_length, retract,
                             root_to_hip_pitch, workspace_bounds)
from marm.model import DesignParams, apply_mass_set, build_model, make_template, total_mass
from marm.planner import plan, scenario_problem, validate_path

pytestmark = pytest.mark.slow


def record(n, ok, detail, elapsed, budget):
    in_time = elapsed <= budget
    verdict = "PASS" if ok and in_time else "FAIL"
    ACCEPTANCE_LINES[n] = f"criterion {n:2d}: {verdict}  {detail}  ({elapsed:.1f} s of {budget:.0f} s)"
    print(ACCEPTANCE_LINES[n])
    assert ok, detail
    assert in_time, f"took {elapsed:.1f} s, budget {budget} s"


def test_01_jacobian():
    t0 = time.monotonic()
    rng = np.random.default_rng(101)
    worst = 0.0
    for k in range(1000):
        m = build_model(make_template(*TEMPLATES[k % 3]), DesignParams(*rng.uniform(0.15, 0.7, 2)))
        q = random_configuration(m, rng)
        frame = m.tcp_frame(int(rng.integers(3)))
        J, Jfd = jacobian(m, q, frame), point_jacobian_fd(m, q, frame)
        scale = np.maximum(np.linalg.norm(Jfd, axis=0), 1e-3)
        worst = max(worst, float(np.max(np.linalg.norm(J - Jfd, axis=0) / scale)))
    record(1, worst <= 1e-5, f"1000 Jacobians, worst column rel. err {worst:.1e}", time.monotonic() - t0, 30)


def test_02_inverse_dynamics():
    t0 = time.monotonic()
    rng = np.random.default_rng(202)
    m = build_model(make_template(6, "offset"), ACCEPTED_DESIGN)
    res = kkt = pe = 0.0
    for k in range(500):
        q = random_configuration(m, rng, 0.5)
        contacts = [Contact(m.tcp_frame(i), fk(m, q, m.tcp_frame(i))) for i in range(1 + k % 3)]
        sol = solve_id_qp(m, q, rng.normal(size=m.nv), rng.normal(size=m.nv), contacts, None, False)
        res, kkt = max(res, sol.residual), max(kkt, sol.kkt_residual)
        g = gravity_torque(m, q)
        fd = np.empty(m.n)
        for j in range(m.n):
            dv = np.zeros(m.nv)
            dv[6 + j] = 1e-6
            fd[j] = (potential_energy(m, retract(q, dv)) - potential_energy(m, retract(q, -dv))) / 2e-6
        pe = max(pe, float(np.linalg.norm(fd - g) / max(np.linalg.norm(g), 1.0)))
    ok = res <= 1e-6 and kkt <= 1e-6 and pe <= 1e-6
    record(2, ok, f"500 QPs: residual {res:.1e}, KKT {kkt:.1e}; gravity vs energy {pe:.1e}", time.monotonic() - t0, 60)


def test_03_cone_rotation():
    t0 = time.monotonic()
    rng = np.random.default_rng(303)
    n = rng.normal(size=(100_000, 3))
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    n = n[n[:, 0] ** 2 + n[:, 1] ** 2 >= 1e-6]
    orth = image = 0.0
    for v in n:
        R = cone_rotation(v)
        orth = max(orth, float(np.abs(R.T @ R - np.eye(3)).max()))
        image = max(image, float(np.abs(R @ v - [0, 0, 1]).max()))
    degenerate = True
    for v in ([0, 0, 1.0], [0, 0, -1.0]):
        R = cone_rotation(v)
        degenerate &= np.abs(R.T @ R - np.eye(3)).max() <= 1e-12 and abs(np.linalg.det(R) - 1) <= 1e-12
        degenerate &= np.abs(R @ v - [0, 0, 1]).max() <= 1e-12
    ok = orth <= 1e-12 and image <= 1e-12 and degenerate
    record(3, ok, f"{len(n)} normals: |R'R-I| {orth:.1e}, |Rn-e_z| {image:.1e}, poles ok={degenerate}",
           time.monotonic() - t0, 5)


def test_04_zero_gravity_tile_carry():
    t0 = time.monotonic()
    model = build_model(make_template(6, "offset"), ACCEPTED_DESIGN)
    r = run_scenario(model, DEFAULT_BATTERY[2], seed=0)
    lim = WrenchLimits()
    peak = max(r.peak_torque) if r.peak_torque else float("inf")
    wrench_ok = all(c["peak_compression"] <= lim.max_compression and c["peak_radial"] <= lim.max_radial
                    and c["peak_axial_torque"] <= lim.max_axial_torque and c["peak_bending"] <= lim.max_bending
                    for c in r.contacts)
    speed = float(np.abs(r.trajectory.qd[:, 6:]).max()) if r.trajectory is not None else float("inf")
    ok = r.status == "feasible" and peak < 20.0 and wrench_ok and speed <= 1.0 + 1e-6
    record(4, ok, f"single-stance tile carry {r.status}: peak torque {peak:.2f} N m, wrenches ok={wrench_ok}, "
           f"max joint speed {speed:.2f} rad/s", time.monotonic() - t0, 300)


def test_05_gravity_pivot():
    t0 = time.monotonic()
    model = build_model(make_template(6, "offset"), ACCEPTED_DESIGN)
    r = run_scenario(model, DEFAULT_BATTERY[3], seed=0, budgets=Budgets(trajopt_s=540.0))
    peaks = dict(zip(r.joint_names, r.peak_torque))
    big = max((v for k, v in peaks.items() if "hip" in k or "knee" in k), default=float("inf"))
    ankle = max((v for k, v in peaks.items() if "ankle" in k), default=float("inf"))
    pivot = bool(r.details.get("pivot"))
    ok = r.status == "feasible" and big <= 200.0 and ankle <= 100.0 and pivot
    record(5, ok, f"gravity single stance at L1={ACCEPTED_DESIGN.L1} L2={ACCEPTED_DESIGN.L2} {r.status}: "
           f"hip/knee peak {big:.1f}, ankle peak {ankle:.1f} N m, pivot={pivot}", time.monotonic() - t0, 600)


def test_06_manipulability():
    t0 = time.monotonic()
    mins = {}
    low = {}
    for dof, ankle in [(7, "offset"), (6, "offset"), (6, "inline")]:
        tm = make_template(dof, ankle)
        m = build_model(tm, ACCEPTED_DESIGN)
        path, _ = nominal_path(tm, ACCEPTED_DESIGN)
        prof = manipulability_profile(m, limb_root_path_to_world(m, 0, path), best_effort=True)
        mins[dof, ankle] = float(prof.min())
        low[dof, ankle] = np.flatnonzero(prof < 1e-4)
    off = low[6, "offset"]
    contiguous = len(off) > 1 and bool(np.all(np.diff(off) == 1))
    ok = mins[7, "offset"] > 1e-3 and contiguous and len(low[6, "inline"]) <= 1
    record(6, ok, f"7-DoF min {mins[7, 'offset']:.3f}; 6-DoF offset below 1e-4 at samples {off.tolist()}; "
           f"6-DoF in-line at {low[6, 'inline'].tolist()}", time.monotonic() - t0, 120)


def far_reach_ik(m, tm, params, h, step=0.01):
    """Largest root-frame TCP distance the limb reaches at depth ``h``, by IK continuation outward."""
    opts = IkOptions(free_base=False, joint_mask=limb_mask(m, 0), max_iters=300)
    depth = root_to_hip_pitch(tm, params) + h + ankle_to_tcp(tm, params)

    def solve(x, seed):
        T = np.eye(4)
        T[:3, 3] = (x, 0.0, depth)
        try:
            return ik_solve(m, {m.tcp_frame(0): limb_root_path_to_world(m, 0, [T])[0]}, seed, opts)
        except NoConvergence:
            return None

    x = 0.8 * workspace_bounds(tm, params, h).R_far
    q = None
    for hip in np.linspace(0.1, 2.6, 11):  # any elbow posture that reaches the start point
        for knee in (-0.3, -0.8, -1.5, -2.2, 0.3, 0.8, 1.5, 2.2):
            q = solve(x, home_configuration(m, hip, knee))
            if q is not None:
                break
        if q is not None:
            break
    if q is None:
        return float("nan")
    while (q2 := solve(x + step, q)) is not None:
        x, q = x + step, q2
    lo, hi = x, x + step
    while hi - lo > 1e-4:
        mid = (lo + hi) / 2
        q2 = solve(mid, q)
        if q2 is None:
            hi = mid
        else:
            lo, q = mid, q2
    return lo


def test_07_workspace_bounds():
    t0 = time.monotonic()
    worst, dmin_ok = 0.0, True
    for dof, ankle in TEMPLATES:
        tm = make_template(dof, ankle)
        m = build_model(tm, ACCEPTED_DESIGN)
        L = planar_length(tm, ACCEPTED_DESIGN)
        for frac in (0.0, 0.2, 0.4, 0.6, 0.8):
            wb = workspace_bounds(tm, ACCEPTED_DESIGN, frac * L)
            dmin_ok &= wb.D_min == (tm.ankle_offset if ankle == "offset" else 0.0)
            r = far_reach_ik(m, tm, ACCEPTED_DESIGN, frac * L)
            # the offset ankle sits beside the limb plane: the in-plane radius is what the bound describes
            planar = math.sqrt(max(r * r - wb.lateral_offset**2, 0.0))
            worst = max(worst, abs(planar / wb.R_far - 1.0))
    ok = worst <= 0.02 and dmin_ok
    record(7, ok, f"far radius vs IK sweep, 3 templates x 5 heights: worst rel. err {worst:.2%}; D_min ok={dmin_ok}",
           time.monotonic() - t0, 300)


def test_08_planner_contract():
    t0 = time.monotonic()
    base = build_model(make_template(6, "offset"), ACCEPTED_DESIGN)
    runs, issues = [], []
    for sc in (DEFAULT_BATTERY[0], DEFAULT_BATTERY[2]):
        m = _scenario_model(base, sc)
        scen, world = _geometry(m, sc), socket_world(sc.socket_layout)
        for seed in range(25):
            pb = scenario_problem(m, scen, world, seed=seed)
            path = plan(pb)
            issues += [f"{sc.name}/{seed}: {s}" for s in validate_path(pb, path, tol=(1e-3, 1e-3))]
            runs.append((m, scen, world, seed, path))
    same = True
    for m, scen, world, seed, path in runs[::10]:  # replay a subset with the same seeds
        again = plan(scenario_problem(m, scen, world, seed=seed))
        same &= again.as_array().tobytes() == path.as_array().tobytes()
    ok = not issues and same
    record(8, ok, f"{len(runs)} plans, {len(issues)} validation issues, identical on replay={same}",
           time.monotonic() - t0, 600)


def test_09_sweep_pipeline(tmp_path):
    t0 = time.monotonic()
    tm = make_template(6, "offset")
    values = [0.22, 0.25, 0.28, 0.31, 0.34]  # totals 0.44 to 0.68 around the 0.57 reach threshold
    grid = design_grid(values, values)
    scenarios = list(DEFAULT_BATTERY[:2])  # both double-stance cases share the reach threshold
    blobs = []
    for run in range(2):
        res = sweep(tm, grid, scenarios, seed=7)
        emit_report(res, tmp_path / f"run{run}", "json")
        blobs.append((tmp_path / f"run{run}" / "report.json").read_bytes())
    status = {(r.params.L1, r.params.L2): {e.status for e in r.entries} for r in res.reports}
    split = all((s == {"feasible"}) == (L1 + L2 > 0.57) for (L1, L2), s in status.items())
    below_ok = all(s == {"kinematic_fail"} for (L1, L2), s in status.items() if L1 + L2 < 0.57)
    feasible = [p for p in grid if status[p.L1, p.L2] == {"feasible"}]
    minimal = res.selected is not None and feasible and res.selected == feasible[0]
    ok = split and below_ok and bool(minimal) and blobs[0] == blobs[1]
    record(9, ok, f"5x5 grid: {len(feasible)} feasible above 0.57, rest kinematic_fail={below_ok}; "
           f"selected {res.selected}; byte-identical={blobs[0] == blobs[1]}", time.monotonic() - t0, 1200)


def test_10_mass_sets():
    t0 = time.monotonic()
    model = build_model(make_template(6, "offset"), ACCEPTED_DESIGN)
    proto = total_mass(apply_mass_set(model, "prototype"))
    board = total_mass(apply_mass_set(model, "breadboard"))
    ok = abs(proto - 94.4) <= 0.944 and abs(board - 90.0) <= 0.9
    record(10, ok, f"prototype {proto:.1f} kg, breadboard {board:.1f} kg", time.monotonic() - t0, 5)
