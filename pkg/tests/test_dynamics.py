import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_configuration, seeds
from oracles import spatial_rnea
from marm.dynamics import (GRAVITY, Contact, Wrench, WrenchLimits, check_wrench_limits, cone_rotation, contact_jacobian,
                           coriolis_matrix, dynamics_terms, evaluate_trajectory, forward_dynamics, gravity_torque,
                           gravity_vector, integrate, kinetic_energy, mass_matrix, potential_energy, solve_id_qp)
from marm.errors import Infeasible, NonUnitNormal
from marm.kinematics import fk, forward, home_configuration, jacobian, retract
from marm.model import total_mass
from marm.trajectory import Trajectory


def _contacts(model, q, k):
    return [Contact(model.tcp_frame(i), fk(model, q, model.tcp_frame(i))) for i in range(k)]


# -- terms ---------------------------------------------------------------------


def test_h_equals_g_at_rest(model):
    q = home_configuration(model)
    t = dynamics_terms(model, q, np.zeros(model.nv))
    assert np.array_equal(t.h, t.g)
    t0 = dynamics_terms(model, q, np.zeros(model.nv), gravity=0.0)
    assert not t0.h.any()


@given(seeds)
def test_inverse_dynamics_matches_spatial_oracle(seed):
    from marm.model import DesignParams, build_model, make_template

    rng = np.random.default_rng(seed)
    m = build_model(make_template(6 + seed % 2, "offset"), DesignParams(*rng.uniform(0.2, 0.7, 2)))
    q = random_configuration(m, rng)
    v, a = rng.normal(size=m.nv), rng.normal(size=m.nv)
    t = dynamics_terms(m, q, v)
    lhs = t.M @ a + t.h
    ref = spatial_rnea(m, q, v, a, GRAVITY)
    assert np.linalg.norm(lhs - ref) <= 1e-9 * np.linalg.norm(ref)


@given(seeds)
def test_mass_matrix_spd_and_passivity(seed):
    from marm.model import DesignParams, build_model, make_template

    rng = np.random.default_rng(seed)
    m = build_model(make_template(6, "offset"), DesignParams(0.5, 0.5))
    q = random_configuration(m, rng)
    v = rng.normal(size=m.nv)
    M = mass_matrix(m, q)
    assert np.allclose(M, M.T, atol=1e-12)
    assert np.linalg.eigvalsh(M).min() > 0
    eps = 1e-6
    Md = (mass_matrix(m, retract(q, v * eps)) - mass_matrix(m, retract(q, -v * eps))) / (2 * eps)
    S = Md - 2 * coriolis_matrix(m, q, v)
    assert np.abs(S + S.T).max() <= 1e-5 * max(1.0, np.abs(Md).max())


def test_gravity_torque_zero_without_gravity(model):
    assert not gravity_torque(model, home_configuration(model), gravity=0.0).any()


@given(seeds)
def test_gravity_torque_is_weight_moment(seed):
    """Each joint carries the moment of the weight of everything distal to it about its axis."""
    from marm.model import DesignParams, build_model, make_template

    rng = np.random.default_rng(seed)
    m = build_model(make_template(6, "offset"), DesignParams(0.5, 0.5))
    q = random_configuration(m, rng)
    ks = forward(m, q)
    coms = ks.p + np.einsum("bij,bj->bi", ks.R, m.coms)
    tau = gravity_torque(m, q)
    j = m.joint_index(0, "hip_pitch")
    distal = [i for i in range(m.n) if m.ancestors[i, j]]
    ref = sum(m.masses[i] * GRAVITY * np.cross(ks.axes[j], coms[i] - ks.p[j])[2] for i in distal)
    assert tau[j] == pytest.approx(ref, rel=1e-10, abs=1e-10)


@given(seeds)
def test_gravity_is_potential_gradient(seed):
    from marm.model import DesignParams, build_model, make_template

    rng = np.random.default_rng(seed)
    m = build_model(make_template(6, "offset"), DesignParams(*rng.uniform(0.2, 0.7, 2)))
    q = random_configuration(m, rng)
    g = gravity_vector(m, q)
    assert np.allclose(g[6:], gravity_torque(m, q), rtol=1e-10, atol=1e-9)
    eps = 1e-6
    fd = np.empty(m.nv)
    for k in range(m.nv):
        dv = np.zeros(m.nv)
        dv[k] = eps
        fd[k] = (potential_energy(m, retract(q, dv)) - potential_energy(m, retract(q, -dv))) / (2 * eps)
    assert np.linalg.norm(fd - g) <= 1e-6 * np.linalg.norm(g)


# -- cone rotation and wrench checks ---------------------------------------------


def test_cone_rotation_examples():
    R = cone_rotation([1.0, 0.0, 0.0])
    assert np.array_equal(R, np.array([[0, -1, 0], [0, 0, -1], [1, 0, 0]], dtype=float))
    assert np.array_equal(cone_rotation([0, 0, 1.0]), np.eye(3))
    Rm = cone_rotation([0, 0, -1.0])
    assert np.allclose(Rm @ [0, 0, -1.0], [0, 0, 1]) and np.linalg.det(Rm) == pytest.approx(1.0)
    with pytest.raises(NonUnitNormal):
        cone_rotation([0, 0, 2.0])


@given(st.floats(-math.pi, math.pi), st.floats(-1.0, 1.0))
def test_cone_rotation_in_so3(phi, z):
    r = math.sqrt(max(0.0, 1 - z * z))
    n = np.array([r * math.cos(phi), r * math.sin(phi), z])
    n /= np.linalg.norm(n)
    R = cone_rotation(n)
    assert np.abs(R.T @ R - np.eye(3)).max() <= 1e-12
    assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-12)
    assert np.abs(R @ n - [0, 0, 1]).max() <= 1e-12


def test_wrench_limit_examples():
    n = np.array([0, 0, 1.0])
    v = check_wrench_limits(Wrench(np.array([0, 0, 5000.0]), np.zeros(3)), n)
    assert v.ok and v.margins["compression"] == 0.0
    v = check_wrench_limits(Wrench(np.zeros(3), np.array([151.0, 0, 0])), n)
    assert not v.ok and v.failed == ["bending"]
    v = check_wrench_limits(Wrench(np.zeros(3), np.zeros(3)), n)
    L = WrenchLimits()
    assert v.ok and v.margins == {"compression": L.max_compression, "radial": L.max_radial,
                                  "axial_torque": L.max_axial_torque, "bending": L.max_bending}
    # pulling on a latch is not compression
    assert check_wrench_limits(Wrench(np.array([0, 0, -6000.0]), np.zeros(3)), n).compression == 0.0


# -- contact Jacobian -------------------------------------------------------------


def test_contact_jacobian_stacks(model):
    q = home_configuration(model)
    assert contact_jacobian(model, q, []).shape == (0, model.nv)
    cs = _contacts(model, q, 2)
    J = contact_jacobian(model, q, cs)
    assert np.array_equal(J[:6], jacobian(model, q, cs[0].frame))
    assert np.array_equal(J[6:], jacobian(model, q, cs[1].frame))


# -- QP inverse dynamics ------------------------------------------------------------


def test_weightless_equilibrium(model):
    q = home_configuration(model)
    z = np.zeros(model.nv)
    sol = solve_id_qp(model, q, z, z, _contacts(model, q, 2), WrenchLimits(), gravity=0.0)
    assert np.abs(sol.qdd).max() < 1e-12 and np.abs(sol.f).max() < 1e-9 and np.abs(sol.tau).max() < 1e-9


def test_single_contact_static_closed_form(model):
    q = home_configuration(model)
    z = np.zeros(model.nv)
    cs = _contacts(model, q, 1)
    weight = total_mass(model) * GRAVITY
    # the wrench regularization lets the body sag a little; without it the closed form is exact
    assert solve_id_qp(model, q, z, z, cs, None, False).wrenches[0].force[2] == pytest.approx(weight, rel=1e-2)
    sol = solve_id_qp(model, q, z, z, cs, None, False, w_f=0.0)
    assert sol.wrenches[0].force[2] == pytest.approx(weight, rel=1e-8)
    J = contact_jacobian(model, q, cs)
    assert np.allclose(sol.tau, gravity_torque(model, q) - (J.T @ sol.f)[6:], atol=1e-8)
    assert np.abs(sol.qdd).max() < 1e-9
    assert sol.residual <= 1e-8


@given(seeds, st.integers(1, 3))
def test_qp_residual_and_stationarity(seed, k):
    from marm.model import DesignParams, build_model, make_template

    rng = np.random.default_rng(seed)
    m = build_model(make_template(6, "offset"), DesignParams(0.5, 0.5))
    q = random_configuration(m, rng, 0.5)
    sol = solve_id_qp(m, q, rng.normal(size=m.nv), rng.normal(size=m.nv), _contacts(m, q, k), None, False)
    assert sol.residual <= 1e-6 and sol.kkt_residual <= 1e-6


def test_cost_monotone_in_wrench_limits(model):
    q = home_configuration(model)
    z = np.zeros(model.nv)
    rng = np.random.default_rng(3)
    qdd_ref = rng.normal(size=model.nv) * 2
    cs = _contacts(model, q, 2)
    costs = []
    for scale in (0.2, 0.5, 1.0, 2.0):
        L = WrenchLimits(5000 * scale, 5000 * scale, 420 * scale, 150 * scale)
        costs.append(solve_id_qp(model, q, z, qdd_ref, cs, L, False).qp_cost)
    assert all(b <= a * (1 + 1e-9) + 1e-12 for a, b in zip(costs, costs[1:]))


def test_infeasible_limits_reported(model):
    q = home_configuration(model)
    z = np.zeros(model.nv)
    tiny = WrenchLimits(1e-3, 1e-3, 1e-3, 1e-3)
    qd = np.zeros(model.nv)
    qd[6:] = 15.0  # keeping three feet still at this speed needs far more than the limits allow
    with pytest.raises(Infeasible) as exc:
        solve_id_qp(model, q, qd, z, _contacts(model, q, 3), tiny, True)
    assert exc.value.diagnostics["violated"]


# -- integration ----------------------------------------------------------------------


def test_integrate_uniform_and_linear(model):
    q = home_configuration(model)
    qd = np.linspace(-0.3, 0.3, model.nv)
    q1, qd1 = integrate(q, qd, np.zeros(model.nv), 0.1)
    assert np.array_equal(qd1, qd)
    assert np.allclose(q1.joints, q.joints + qd[6:] * 0.1)
    qdd = np.full(model.nv, 0.25)
    v = np.zeros(model.nv)
    for _ in range(8):
        q, v = integrate(q, v, qdd, 0.125)
    assert np.array_equal(v, qdd * 1.0)  # dyadic steps: exact
    with pytest.raises(ValueError):
        integrate(q, v, qdd, 0.0)


def test_quaternion_stays_unit(model):
    q = home_configuration(model)
    qd = np.zeros(model.nv)
    qd[3:6] = (1.3, -0.7, 2.1)
    for _ in range(10_000):
        q, qd = integrate(q, qd, np.zeros(model.nv), 1e-3)
    assert abs(np.linalg.norm(q.base_quat) - 1) <= 1e-12


def test_free_fall_energy(model):
    rng = np.random.default_rng(0)
    q = home_configuration(model)
    qd = rng.normal(scale=0.3, size=model.nv)
    E0 = kinetic_energy(model, q, qd) + potential_energy(model, q, 0.0)
    for _ in range(1000):
        q, qd = integrate(q, qd, forward_dynamics(model, q, qd, gravity=0.0), 1e-3)
    E1 = kinetic_energy(model, q, qd)
    assert abs(E1 - E0) <= 1e-3 * E0


# -- trajectory evaluation ---------------------------------------------------------------


def test_static_hold_reports_static_loads(model):
    q = home_configuration(model)
    N = 6
    traj = Trajectory(np.arange(N) * 0.1, np.tile(q.vector(), (N, 1)), np.zeros((N, model.nv)), np.zeros((N, model.nv)))
    cs = _contacts(model, q, 3)
    rep = evaluate_trajectory(model, traj, cs)
    static = solve_id_qp(model, q, np.zeros(model.nv), np.zeros(model.nv), cs, None, False)
    assert np.allclose(rep.tau, static.tau[None], atol=1e-9)
    assert np.allclose(rep.peak_torque(), np.abs(static.tau), atol=1e-9)


def test_evaluate_flags_overload(model):
    """A violent swing of the free limb overloads it; the report must show that instead of clipping."""
    q = home_configuration(model)
    N = 5
    Q = np.tile(q.vector(), (N, 1))
    Q[:, 7 + model.limb_joints[2]] += 1.0 * np.array([0, 0, 1, 0, 0])[:, None]  # 1 rad kick in 0.1 s
    traj = Trajectory(np.arange(N) * 0.1, Q, np.zeros((N, model.nv)), np.zeros((N, model.nv)))
    rep = evaluate_trajectory(model, traj, _contacts(model, q, 2))
    assert any(v["kind"] == "torque" for v in rep.violations)
    for v in rep.violations:
        if v["kind"] == "torque":
            assert abs(v["value"]) > v["limit"]
