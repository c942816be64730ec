"""Design sweep: run a scenario battery over a grid of link lengths and pick the most compact feasible design.

Every grid point is gated first by a deterministic reach rule, then the
scenario's motion engine (sampling planner or trajectory optimization)
produces a motion, which is replayed through inverse dynamics and checked
against the torque and socket wrench limits.
"""
from dataclasses import dataclass, field, asdict
import csv
import json
import math
import os

import jsonschema
import numpy as np

from .collision import socket_lattice, socket_world
from .dynamics import evaluate_trajectory
from .errors import (GeometryInvalid, HeightExceedsReach, Infeasible, InvalidEndpoints, NoFeasibleDesign,
                     NotConverged, PlanningTimeout, ProjectionFailed, SamplingExhausted, SchemaViolation)
from .kinematics import ankle_to_tcp, root_to_hip_pitch, workspace_bounds
from .model import DesignParams, LimbTemplate, attach_payload, build_model, make_template
from .planner import (PlanOptions, PlanningProblem, double_stance_scenario, endpoint_configs, plan,
                      single_stance_scenario, time_parameterize)
from .trajopt import (TrajOptOptions, balanced_seed, build_single_stance_problem, execution_trajectory,
                      pivot_signature, solve)

STATUSES = ("feasible", "kinematic_fail", "torque_fail", "wrench_fail", "timeout")
REPORT_FORMAT = "marm-feasibility-report"
REPORT_VERSION = 1
QUANTILES = (0, 25, 50, 75, 100)

# Execution timing used to replay every motion through inverse dynamics.
EXEC_VEL = 1.0  # rad/s (m/s for base coordinates)
EXEC_ACC = 0.1  # rad/s^2
EXEC_DT = 0.05

# The repo's accepted design for the 6-DoF offset-ankle limb (see README).
ACCEPTED_DESIGN = DesignParams(0.5, 0.5)


# ---------------------------------------------------------------------------
# scenarios

SCENARIO_SCHEMA = {
    "type": "object",
    "required": ["name", "stance_type"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string", "minLength": 1},
        "stance_type": {"enum": ["double", "single"]},
        "payload": {"enum": ["none", "tile"]},
        "gravity": {"enum": ["on", "off"]},
        "motion_engine": {"enum": ["planner", "trajopt"]},
        "spacing": {"type": "number"},
        "base_height": {"type": "number"},
    },
}


@dataclass(frozen=True)
class Scenario:
    name: str
    stance_type: str  # "double" | "single"
    payload: str = "none"  # "none" | "tile"
    gravity: str = "off"
    motion_engine: str = "planner"
    spacing: float = 1.5  # socket lattice spacing (m)
    base_height: float = 0.8  # nominal base height used by the reach gate and the seeds

    def __post_init__(self):
        try:
            jsonschema.validate(self.to_dict(), SCENARIO_SCHEMA)
        except jsonschema.ValidationError as exc:
            raise SchemaViolation("/".join(map(str, exc.absolute_path)) or "scenario", exc.message) from None
        if not self.spacing > 0 or not self.base_height > 0:
            raise GeometryInvalid("socket spacing and base height must be positive")
        if self.stance_type == "single" and self.gravity == "on" and self.motion_engine != "trajopt":
            raise GeometryInvalid("single stance under gravity needs the trajopt engine")
        if self.motion_engine == "trajopt" and self.stance_type != "single":
            raise GeometryInvalid("the trajopt engine handles single-stance relocations only")

    @property
    def g(self):
        return 9.81 if self.gravity == "on" else 0.0

    @property
    def socket_layout(self):
        return socket_lattice(self.spacing)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, doc):
        if not isinstance(doc, dict):
            raise SchemaViolation("scenario", "expected an object")
        try:
            jsonschema.validate(doc, SCENARIO_SCHEMA)
        except jsonschema.ValidationError as exc:
            raise SchemaViolation("/".join(map(str, exc.absolute_path)) or "scenario", exc.message) from None
        return cls(**doc)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise SchemaViolation("scenario", f"not valid JSON: {exc}") from None
        return cls.from_dict(doc)


DEFAULT_BATTERY = (
    Scenario("double_free", "double"),
    Scenario("double_tile", "double", payload="tile"),
    Scenario("single_tile", "single", payload="tile"),
    Scenario("single_tile_gravity", "single", payload="tile", gravity="on", motion_engine="trajopt"),
)

# The planner-only part of the battery (cheap enough for dense grids).
PLANNER_BATTERY = DEFAULT_BATTERY[:3]


@dataclass(frozen=True)
class Budgets:
    planning_s: float = 60.0
    trajopt_s: float = 120.0
    sampling_attempts: int = 1000


# ---------------------------------------------------------------------------
# reports


@dataclass
class ScenarioResult:
    scenario: str
    status: str
    message: str = ""
    joint_names: list = field(default_factory=list)
    peak_torque: list = field(default_factory=list)
    p95_torque: list = field(default_factory=list)
    torque_limits: list = field(default_factory=list)
    contacts: list = field(default_factory=list)  # per contact: frame + peak checks
    details: dict = field(default_factory=dict)  # engine-specific extras (deterministic values only)
    trajectory: object = None  # not serialized
    load_report: object = None  # not serialized

    @property
    def feasible(self):
        return self.status == "feasible"

    def to_dict(self):
        return {
            "scenario": self.scenario,
            "status": self.status,
            "message": self.message,
            "joint_names": list(self.joint_names),
            "peak_torque": [float(x) for x in self.peak_torque],
            "p95_torque": [float(x) for x in self.p95_torque],
            "torque_limits": [float(x) for x in self.torque_limits],
            "contacts": self.contacts,
            "details": self.details,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["scenario"], d["status"], d["message"], d["joint_names"], d["peak_torque"], d["p95_torque"],
                   d["torque_limits"], d["contacts"], d["details"])


@dataclass
class FeasibilityReport:
    template: str
    params: DesignParams
    seed: int
    budgets: Budgets
    entries: list  # ScenarioResult per scenario

    @property
    def feasible(self):
        return all(e.feasible for e in self.entries)

    def to_dict(self):
        return {
            "template": self.template,
            "L1": float(self.params.L1),
            "L2": float(self.params.L2),
            "feasible": self.feasible,
            "provenance": {"seed": int(self.seed), "budgets": asdict(self.budgets)},
            "scenarios": [e.to_dict() for e in self.entries],
        }

    @classmethod
    def from_dict(cls, d):
        b = d["provenance"]["budgets"]
        return cls(d["template"], DesignParams(d["L1"], d["L2"]), d["provenance"]["seed"], Budgets(**b),
                   [ScenarioResult.from_dict(e) for e in d["scenarios"]])


@dataclass
class SweepResult:
    template: str
    seed: int
    scenarios: list  # Scenario
    reports: list  # FeasibilityReport, grid order
    selected: DesignParams = None

    def to_dict(self):
        return {
            "format": REPORT_FORMAT,
            "version": REPORT_VERSION,
            "kind": "sweep",
            "template": self.template,
            "seed": int(self.seed),
            "scenarios": [s.to_dict() for s in self.scenarios],
            "grid": [r.to_dict() for r in self.reports],
            "selected": None if self.selected is None else {"L1": self.selected.L1, "L2": self.selected.L2},
        }

    @classmethod
    def from_dict(cls, d):
        sel = d.get("selected")
        return cls(d["template"], d["seed"], [Scenario.from_dict(s) for s in d["scenarios"]],
                   [FeasibilityReport.from_dict(r) for r in d["grid"]],
                   None if sel is None else DesignParams(sel["L1"], sel["L2"]))


_NUM_LIST = {"type": "array", "items": {"type": "number"}}
_ENTRY_SCHEMA = {
    "type": "object",
    "required": ["scenario", "status", "message", "joint_names", "peak_torque", "p95_torque", "torque_limits",
                 "contacts", "details"],
    "properties": {
        "scenario": {"type": "string"},
        "status": {"enum": list(STATUSES)},
        "message": {"type": "string"},
        "joint_names": {"type": "array", "items": {"type": "string"}},
        "peak_torque": _NUM_LIST,
        "p95_torque": _NUM_LIST,
        "torque_limits": _NUM_LIST,
        "contacts": {"type": "array", "items": {"type": "object", "required": ["frame"]}},
        "details": {"type": "object"},
    },
}
_REPORT_SCHEMA = {
    "type": "object",
    "required": ["template", "L1", "L2", "feasible", "provenance", "scenarios"],
    "properties": {
        "template": {"type": "string"},
        "L1": {"type": "number", "exclusiveMinimum": 0},
        "L2": {"type": "number", "exclusiveMinimum": 0},
        "feasible": {"type": "boolean"},
        "provenance": {
            "type": "object",
            "required": ["seed", "budgets"],
            "properties": {"seed": {"type": "integer", "minimum": 0}, "budgets": {"type": "object"}},
        },
        "scenarios": {"type": "array", "items": _ENTRY_SCHEMA},
    },
}
REPORT_SCHEMA = {
    "oneOf": [
        {
            "type": "object",
            "required": ["format", "version", "kind", "template", "seed", "scenarios", "grid", "selected"],
            "properties": {
                "format": {"const": REPORT_FORMAT},
                "version": {"const": REPORT_VERSION},
                "kind": {"const": "sweep"},
                "grid": {"type": "array", "items": _REPORT_SCHEMA},
                "selected": {"oneOf": [{"type": "null"}, {"type": "object", "required": ["L1", "L2"]}]},
            },
        },
        {
            "type": "object",
            "required": ["format", "version", "kind", "report"],
            "properties": {
                "format": {"const": REPORT_FORMAT},
                "version": {"const": REPORT_VERSION},
                "kind": {"const": "design"},
                "report": _REPORT_SCHEMA,
            },
        },
    ]
}


def validate_report(doc):
    try:
        jsonschema.validate(doc, REPORT_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise SchemaViolation("/".join(map(str, exc.absolute_path)) or "report", exc.message) from None


def report_document(obj):
    if isinstance(obj, SweepResult):
        doc = obj.to_dict()
    elif isinstance(obj, FeasibilityReport):
        doc = {"format": REPORT_FORMAT, "version": REPORT_VERSION, "kind": "design", "report": obj.to_dict()}
    else:
        raise TypeError("expected a SweepResult or FeasibilityReport")
    validate_report(doc)
    return doc


def load_report(doc):
    validate_report(doc)
    if doc["kind"] == "sweep":
        return SweepResult.from_dict(doc)
    return FeasibilityReport.from_dict(doc["report"])


# ---------------------------------------------------------------------------
# reach gate


def required_horizontal_reach(model, scenario):
    """Horizontal root-to-socket distance every stance limb must cover with the base centred over its feet."""
    r = model.base_spec.mount_radius
    s = scenario.spacing
    if scenario.stance_type == "double":
        return s / math.sqrt(3.0) - r  # three feet on a lattice triangle, base over its centroid
    return 0.5 * (s - r * math.sqrt(3.0))  # two feet, base between them


def reach_gate(model, scenario):
    """None when the sockets are inside the far workspace boundary at the nominal base height, else a reason.

    The height used is the hip pitch axis above the ankle pitch axis of a
    latched foot with the base origin at ``scenario.base_height``.
    """
    tm, pr = model.template, model.params
    if tm is None or pr is None:
        return None
    root_z = scenario.base_height - model.base_spec.half_extents[2]
    h = root_z - root_to_hip_pitch(tm, pr) - (0.1 + ankle_to_tcp(tm, pr))  # socket tops sit 0.1 m up
    need = required_horizontal_reach(model, scenario)
    try:
        wb = workspace_bounds(tm, pr, abs(h))
    except HeightExceedsReach:
        return f"nominal base height puts the hip {abs(h):.3f} m from the ankle plane, beyond the planar reach"
    reach = math.hypot(wb.R_far, wb.lateral_offset)
    if reach < need:
        return f"far radius {reach:.3f} m < required {need:.3f} m"
    return None


# ---------------------------------------------------------------------------
# single scenario


def _scenario_model(model, scenario):
    if scenario.payload == "tile":
        return attach_payload(model, model.tcp_frame(2))
    return model


def _geometry(model, scenario):
    if scenario.stance_type == "double":
        return double_stance_scenario(model, scenario.spacing, scenario.base_height, tile=scenario.payload == "tile")
    return single_stance_scenario(model, scenario.spacing, scenario.base_height)


def _load_result(scenario, model, traj, contacts, details):
    rep = evaluate_trajectory(model, traj, contacts, gravity=scenario.g)
    kinds = {v["kind"] for v in rep.violations}
    status = "torque_fail" if "torque" in kinds else ("wrench_fail" if "wrench" in kinds else "feasible")
    msg = "" if status == "feasible" else f"{len(rep.violations)} limit violations, first: {rep.violations[0]}"
    checks = rep.peak_wrench_checks()
    contacts_doc = [
        {"frame": fr, "peak_compression": float(c[0]), "peak_radial": float(c[1]), "peak_axial_torque": float(c[2]),
         "peak_bending": float(c[3])}
        for fr, c in zip(rep.contact_frames, checks)
    ]
    return ScenarioResult(scenario.name, status, msg, list(model.joint_names), rep.peak_torque().tolist(),
                          rep.torque_percentile(95).tolist(), model.torque_limits.tolist(), contacts_doc, details,
                          traj, rep)


def _run_planner(model, scenario, seed, budgets):
    scen = _geometry(model, scenario)
    world = socket_world(scenario.socket_layout)
    rng = np.random.default_rng(seed)
    try:
        start, goal = endpoint_configs(model, scen, world, rng, budgets.sampling_attempts)
    except (SamplingExhausted, ProjectionFailed) as exc:
        return ScenarioResult(scenario.name, "kinematic_fail", f"no valid stance configuration: {exc}")
    opts = PlanOptions(time_budget_s=budgets.planning_s)
    problem = PlanningProblem(model, scen.stance, start, goal, world, seed=seed, options=opts)
    try:
        path = plan(problem)
    except PlanningTimeout as exc:
        return ScenarioResult(scenario.name, "timeout", str(exc))
    except InvalidEndpoints as exc:
        return ScenarioResult(scenario.name, "kinematic_fail", str(exc))
    traj = time_parameterize(path, EXEC_VEL, EXEC_ACC, EXEC_DT)
    details = {"waypoints": len(path), "duration_s": float(traj.duration)}
    return _load_result(scenario, model, traj, list(scen.stance), details)


def _trajopt_failure(scenario, exc):
    """Status for an optimization that stopped infeasible: the most violated constraint family."""
    info = exc.diagnostics
    if info.get("reach"):
        return ScenarioResult(scenario.name, "kinematic_fail", str(exc))
    fam = info.get("families", {})
    worst = max(fam, key=fam.get) if fam else "kinematic"
    status = {"torque": "torque_fail", "wrench": "wrench_fail"}.get(worst, "kinematic_fail")
    return ScenarioResult(scenario.name, status, str(exc), details={"violations": fam})


def _run_trajopt(model, scenario, seed, budgets):
    scen = _geometry(model, scenario)
    world = socket_world(scenario.socket_layout)
    seed_q = balanced_seed(model, scen.stance[0])
    opts = TrajOptOptions(time_budget_s=budgets.trajopt_s)
    prob = build_single_stance_problem(model, scen.stance[0].pose, scen.swing_from, scen.swing_to, scenario.g,
                                       world=world, options=opts, seed_start=seed_q, seed_goal=seed_q)
    try:
        res = solve(prob)
    except NotConverged as exc:
        return ScenarioResult(scenario.name, "timeout", str(exc))
    except Infeasible as exc:
        return _trajopt_failure(scenario, exc)
    tv, pivots = pivot_signature(model, res.trajectory, 0)
    details = {"iterations": res.stats.iterations, "cost": float(res.stats.cost),
               "constraint_violation": float(res.stats.constraint_violation), "pivot": pivots,
               "stance_total_variation": tv}
    out = _load_result(scenario, model, execution_trajectory(res, EXEC_VEL, EXEC_ACC, EXEC_DT),
                       list(scen.stance), details)
    out.details["duration_s"] = float(out.trajectory.duration)
    return out


def run_scenario(model, scenario, seed=0, budgets=None):
    """Gate, move and load-check one scenario on one design; failures come back as statuses."""
    budgets = budgets or Budgets()
    model = _scenario_model(model, scenario)
    why = reach_gate(model, scenario)
    if why is not None:
        return ScenarioResult(scenario.name, "kinematic_fail", why, details={"gate": "reach"})
    if scenario.motion_engine == "planner":
        return _run_planner(model, scenario, seed, budgets)
    return _run_trajopt(model, scenario, seed, budgets)


# ---------------------------------------------------------------------------
# sweep


def design_grid(L1_values, L2_values):
    """Cartesian grid in the declared order: total length, then L1, then L2."""
    pts = {(round(float(a), 9), round(float(b), 9)) for a in L1_values for b in L2_values}
    return [DesignParams(a, b) for a, b in sorted(pts, key=lambda p: (round(p[0] + p[1], 9), p[0], p[1]))]


def grid_range(lo, hi, step=0.025):
    n = int(round((hi - lo) / step))
    return [round(lo + k * step, 9) for k in range(n + 1)]


def _check_grid(grid):
    if not grid:
        raise GeometryInvalid("empty design grid")
    keys = [(round(p.total, 9), p.L1, p.L2) for p in grid]
    if keys != sorted(keys) or len(set(keys)) != len(keys):
        raise GeometryInvalid("grid must be strictly sorted by (L1+L2, L1, L2)")


def point_seed(seed, index, k=0):
    """Scenario seed for grid point ``index``, scenario ``k``: an isolated stream per (seed, index)."""
    return int(np.random.SeedSequence([int(seed), int(index), int(k)]).generate_state(1)[0])


def evaluate_design(template, params, scenarios, seed=0, budgets=None, index=0):
    budgets = budgets or Budgets()
    model = build_model(template, params)
    entries = [run_scenario(model, sc, point_seed(seed, index, k), budgets) for k, sc in enumerate(scenarios)]
    return FeasibilityReport(template.name, params, seed, budgets, entries)


def _eval_point(args):
    template, params, scenarios, seed, budgets, index = args
    rep = evaluate_design(template, params, scenarios, seed, budgets, index)
    for e in rep.entries:  # keep what crosses process boundaries small
        e.trajectory = e.load_report = None
    return rep


def sweep(template, grid, scenarios=DEFAULT_BATTERY, seed=0, budgets=None, workers=1, progress=None):
    """Evaluate every grid point on every scenario; select the most compact feasible design."""
    if not isinstance(template, LimbTemplate):
        raise GeometryInvalid("template must be a LimbTemplate")
    grid = list(grid)
    _check_grid(grid)
    budgets = budgets or Budgets()
    jobs = [(template, p, tuple(scenarios), seed, budgets, i) for i, p in enumerate(grid)]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as ex:
            reports = list(ex.map(_eval_point, jobs))
    else:
        reports = []
        for job in jobs:
            reports.append(evaluate_design(*job))
            if progress is not None:
                progress(reports[-1])
    res = SweepResult(template.name, seed, list(scenarios), reports)
    try:
        res.selected = select_design(res)
    except NoFeasibleDesign:
        res.selected = None
    return res


def select_design(result):
    feas = [r.params for r in result.reports if r.feasible]
    if not feas:
        raise NoFeasibleDesign("no grid point is feasible on every scenario")
    return min(feas, key=lambda p: (round(p.total, 9), p.L1, p.L2))


# ---------------------------------------------------------------------------
# output


def torque_quantiles(tau):
    """Per-joint box-plot quantiles of |tau|: rows joints, columns QUANTILES."""
    return np.percentile(np.abs(np.asarray(tau, dtype=float)), QUANTILES, axis=0).T


def write_torque_series(path, t, tau, joint_names):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + list(joint_names))
        for ti, row in zip(t, tau):
            w.writerow([repr(float(ti))] + [repr(float(x)) for x in row])


def write_quantile_table(path, tau, joint_names):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["joint"] + [f"p{q}" for q in QUANTILES])
        for nm, row in zip(joint_names, torque_quantiles(tau)):
            w.writerow([nm] + [repr(float(x)) for x in row])


def _summary_rows(reports):
    for r in reports:
        for e in r.entries:
            peak = max((p / l for p, l in zip(e.peak_torque, e.torque_limits)), default=float("nan"))
            yield [r.template, repr(float(r.params.L1)), repr(float(r.params.L2)), e.scenario, e.status,
                   repr(float(peak))]


def emit_report(obj, out_dir, fmt="json"):
    """Write the summary (``report.json`` or ``report.csv``) plus per-scenario torque series and quantile tables.

    Files only carry deterministic content, so equal inputs give
    byte-identical outputs.  Returns the list of written paths.
    """
    if fmt not in ("json", "csv"):
        raise GeometryInvalid(f"unknown report format {fmt!r}")
    doc = report_document(obj)
    try:
        os.makedirs(out_dir, exist_ok=True)
        written = []
        reports = obj.reports if isinstance(obj, SweepResult) else [obj]
        if fmt == "json":
            path = os.path.join(out_dir, "report.json")
            with open(path, "w") as fh:
                json.dump(doc, fh, indent=2)
                fh.write("\n")
        else:
            path = os.path.join(out_dir, "report.csv")
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["template", "L1", "L2", "scenario", "status", "peak_torque_ratio"])
                w.writerows(_summary_rows(reports))
        written.append(path)
        for r in reports:
            tag = f"L1_{r.params.L1:.3f}_L2_{r.params.L2:.3f}"
            for e in r.entries:
                rep = e.load_report
                if rep is None:
                    continue
                base = os.path.join(out_dir, f"{tag}_{e.scenario}")
                write_torque_series(base + "_torque.csv", rep.t, rep.tau, rep.joint_names)
                write_quantile_table(base + "_quantiles.csv", rep.tau, rep.joint_names)
                written += [base + "_torque.csv", base + "_quantiles.csv"]
    except OSError as exc:
        raise IOError(f"cannot write report to {out_dir}: {exc}") from exc
    return written


def template_by_name(name):
    try:
        dof, ankle = name.split("dof_")
        return make_template(int(dof), ankle)
    except (ValueError, TypeError):
        raise SchemaViolation("template", f"unknown template {name!r}") from None
