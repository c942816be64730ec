import csv
import json
import os

import numpy as np
import pytest
from hypothesis import given, strategies as st

from marm import cli
from marm.codesign import (DEFAULT_BATTERY, PLANNER_BATTERY, QUANTILES, Budgets, FeasibilityReport, Scenario,
                           ScenarioResult, SweepResult, design_grid, emit_report, grid_range, load_report, point_seed,
                           reach_gate, report_document, run_scenario, select_design, sweep, template_by_name,
                           torque_quantiles)
from marm.errors import GeometryInvalid, NoFeasibleDesign, SchemaViolation
from marm.model import DesignParams, build_model
from marm.model_io import load_model


def _report(L1, L2, feasible, template="6dof_offset"):
    e = ScenarioResult("s", "feasible" if feasible else "kinematic_fail", "", ["j0"], [1.0], [0.5], [10.0],
                       [{"frame": "tcp_0"}], {})
    return FeasibilityReport(template, DesignParams(L1, L2), 0, Budgets(), [e])


# --- scenarios


def test_scenario_validation():
    Scenario("x", "double")
    with pytest.raises(SchemaViolation):
        Scenario("x", "triple")
    with pytest.raises(SchemaViolation):
        Scenario.from_dict({"name": "x", "stance_type": "double", "colour": "red"})
    with pytest.raises(SchemaViolation):
        Scenario.from_dict({"stance_type": "double"})
    with pytest.raises(GeometryInvalid):
        Scenario("x", "double", spacing=-1.0)
    with pytest.raises(GeometryInvalid):  # gravity single stance must go through trajopt
        Scenario("x", "single", gravity="on")
    with pytest.raises(GeometryInvalid):
        Scenario("x", "double", motion_engine="trajopt")


def test_scenario_round_trip(tmp_path):
    for sc in DEFAULT_BATTERY:
        p = tmp_path / "s.json"
        p.write_text(json.dumps(sc.to_dict()))
        assert Scenario.load(p) == sc
    assert DEFAULT_BATTERY[3].g == 9.81 and DEFAULT_BATTERY[0].g == 0.0


# --- grid and selection


def test_design_grid_order():
    grid = design_grid([0.3, 0.2, 0.3], [0.25, 0.2])
    keys = [(round(p.total, 9), p.L1, p.L2) for p in grid]
    assert keys == sorted(keys) and len(grid) == 4
    assert grid_range(0.45, 0.5) == [0.45, 0.475, 0.5]


def test_select_tie_break_prefers_shorter_proximal():
    res = SweepResult("t", 0, [], [_report(0.4, 0.4, True), _report(0.5, 0.3, True), _report(0.3, 0.6, False)])
    sel = select_design(res)
    assert (sel.L1, sel.L2) == (0.4, 0.4)
    res = SweepResult("t", 0, [], [_report(0.5, 0.3, True), _report(0.3, 0.5, True)])
    assert select_design(res).L1 == 0.3


def test_no_feasible_design():
    with pytest.raises(NoFeasibleDesign):
        select_design(SweepResult("t", 0, [], [_report(0.3, 0.3, False)]))


def test_empty_battery_selects_first_point(template):
    grid = design_grid([0.3, 0.4], [0.3])
    res = sweep(template, grid, [])
    assert res.selected == grid[0]


def test_sweep_rejects_unsorted_grid(template):
    with pytest.raises(GeometryInvalid):
        sweep(template, [DesignParams(0.4, 0.4), DesignParams(0.3, 0.3)], [])
    with pytest.raises(GeometryInvalid):
        sweep(template, [], [])


@given(st.integers(0, 2**31), st.integers(0, 100))
def test_point_seed_isolated(seed, idx):
    assert point_seed(seed, idx) == point_seed(seed, idx)
    assert point_seed(seed, idx) != point_seed(seed, idx + 1)
    assert point_seed(seed, idx, 0) != point_seed(seed, idx, 1)


def test_reach_gate_monotone(template):
    """Once a total length passes the gate, every longer equal split passes too."""
    for sc in PLANNER_BATTERY:
        passed = [reach_gate(build_model(template, DesignParams(x, x)), sc) is None
                  for x in np.arange(0.15, 0.5, 0.025)]
        first = passed.index(True)
        assert all(passed[first:]) and not any(passed[:first])


def test_gate_failure_is_a_status(template):
    res = run_scenario(build_model(template, DesignParams(0.2, 0.2)), DEFAULT_BATTERY[0])
    assert res.status == "kinematic_fail" and res.details == {"gate": "reach"}


# --- reports


def test_report_round_trip():
    res = SweepResult("6dof_offset", 3, list(PLANNER_BATTERY), [_report(0.4, 0.4, True), _report(0.5, 0.4, False)],
                      DesignParams(0.4, 0.4))
    doc = report_document(res)
    back = load_report(json.loads(json.dumps(doc)))
    assert report_document(back) == doc
    bad = json.loads(json.dumps(doc))
    bad["grid"][0]["scenarios"][0]["status"] = "maybe"
    with pytest.raises(SchemaViolation):
        load_report(bad)


def test_emit_csv_shapes(tmp_path):
    class Load:  # stands in for a LoadReport: times, torques, names
        t = np.linspace(0, 1, 7)
        tau = np.arange(21.0).reshape(7, 3)
        joint_names = ["a", "b", "c"]

    rep = _report(0.4, 0.4, True)
    rep.entries[0].load_report = Load()
    paths = emit_report(rep, tmp_path, "csv")
    assert len(paths) == 3
    with open(paths[1]) as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 1 + 7 and all(len(r) == 1 + 3 for r in rows)
    with open(paths[2]) as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 1 + 3 and len(rows[0]) == 1 + len(QUANTILES)
    first = (tmp_path / "report.csv").read_bytes()
    emit_report(rep, tmp_path, "csv")
    assert (tmp_path / "report.csv").read_bytes() == first


@given(st.floats(-50, 50, allow_nan=False), st.integers(1, 20))
def test_constant_series_quantiles(c, n):
    q = torque_quantiles(np.full((n, 2), c))
    assert np.allclose(q, abs(c))


def test_template_by_name():
    assert template_by_name("7dof_offset").dof_count == 7
    with pytest.raises(SchemaViolation):
        template_by_name("banana")


# --- command line


def test_cli_generate(tmp_path):
    assert cli.main(["generate", "--L1", "0.5", "--L2", "0.5", "--mass-set", "prototype", "--out", str(tmp_path)]) == 0
    m = load_model(tmp_path / "model.json")
    assert m.params == DesignParams(0.5, 0.5)


def test_cli_invalid_inputs(tmp_path):
    assert cli.main(["generate", "--L1", "0.01", "--L2", "0.5", "--out", str(tmp_path)]) == 3
    assert cli.main(["bogus"]) == 3
    assert cli.main(["plan", "--model", str(tmp_path / "missing.json"), "--scenario", "x.json"]) == 3
    cli.main(["generate", "--L1", "0.5", "--L2", "0.5", "--out", str(tmp_path)])
    bad = tmp_path / "bad.json"
    bad.write_text('{"name": "x", "stance_type": "sideways"}')
    assert cli.main(["plan", "--model", str(tmp_path / "model.json"), "--scenario", str(bad)]) == 3
    assert cli.main(["sweep", "--L1", "0.5:0.4", "--scenario", str(bad)]) == 3
    assert cli.main(["report", "--in", str(bad), "--out", str(tmp_path)]) == 3


def test_cli_sweep_infeasible_and_report(tmp_path):
    """A grid that fails the reach gate everywhere exits 2, and its report re-emits unchanged."""
    sc = tmp_path / "s.json"
    sc.write_text(json.dumps(DEFAULT_BATTERY[0].to_dict()))
    out = tmp_path / "sweep"
    assert cli.main(["sweep", "--L1", "0.2", "--L2", "0.2,0.225", "--scenario", str(sc), "--out", str(out)]) == 2
    doc = json.loads((out / "report.json").read_text())
    assert doc["selected"] is None and len(doc["grid"]) == 2
    again = tmp_path / "again"
    assert cli.main(["report", "--in", str(out / "report.json"), "--out", str(again)]) == 0
    assert (again / "report.json").read_bytes() == (out / "report.json").read_bytes()
