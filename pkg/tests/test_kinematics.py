import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import TEMPLATES, random_configuration, seeds
from oracles import chain_fk, point_jacobian_fd
from marm.errors import HeightExceedsReach, NoConvergence, UnknownFrame
from marm.kinematics import (IkOptions, fk, home_configuration, ik_solve, jacobian, limb_mask, limb_root_path_to_world,
                             manipulability_index, manipulability_profile, nominal_path, planar_length, pose_residuals,
                             workspace_bounds)
from marm.model import DesignParams, build_model, make_template
from marm.spatial import quat_from_rotvec, quat_to_matrix, skew


@given(seeds)
def test_fk_matches_chain_composition(seed):
    rng = np.random.default_rng(seed)
    dof, ankle = TEMPLATES[seed % 3]
    m = build_model(make_template(dof, ankle), DesignParams(*rng.uniform(0.15, 0.7, 2)))
    q = random_configuration(m, rng)
    for frame in (m.tcp_frame(seed % 3), m.root_frame(0), m.frames[seed % len(m.frames)].name):
        assert np.abs(fk(m, q, frame) - chain_fk(m, q, frame)).max() < 1e-12


def test_root_frame_at_zero_is_mount(model):
    q = model.zero_configuration()
    q.base_pos[:] = 0.0
    fr = model.frame(model.root_frame(1))
    T = fk(model, q, model.root_frame(1))
    assert np.allclose(T[:3, 3], fr.position, atol=1e-15)


def test_unknown_frame(model):
    with pytest.raises(UnknownFrame):
        fk(model, model.zero_configuration(), "nope")
    with pytest.raises(UnknownFrame):
        jacobian(model, model.zero_configuration(), "nope")


@given(seeds)
def test_jacobian_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    dof, ankle = TEMPLATES[seed % 3]
    m = build_model(make_template(dof, ankle), DesignParams(*rng.uniform(0.15, 0.7, 2)))
    q = random_configuration(m, rng)
    frame = m.tcp_frame(int(rng.integers(3)))
    J, Jfd = jacobian(m, q, frame), point_jacobian_fd(m, q, frame)
    scale = np.maximum(np.linalg.norm(Jfd, axis=0), 1e-3)
    assert np.max(np.linalg.norm(J - Jfd, axis=0) / scale) <= 1e-5


def test_base_frame_has_no_joint_columns(model):
    J = jacobian(model, home_configuration(model), model.root_frame(2))
    assert not J[:, 6:].any()


@given(seeds)
def test_floating_base_block(seed):
    rng = np.random.default_rng(seed)
    m = build_model(make_template(6, "offset"), DesignParams(0.5, 0.5))
    q = random_configuration(m, rng)
    J = jacobian(m, q, m.tcp_frame(1))
    p = fk(m, q, m.tcp_frame(1))[:3, 3]
    assert np.allclose(J[:3, :3], np.eye(3))
    assert np.allclose(J[:3, 3:6], -skew(p - q.base_pos), atol=1e-12)
    assert np.allclose(J[3:, 3:6], np.eye(3))
    # joints of other limbs do not move this TCP
    other = np.ones(m.n, bool)
    other[m.limb_joints[1]] = False
    assert not J[:, 6:][:, other].any()


def test_ik_fixed_point(model):
    q = home_configuration(model)
    targets = {model.tcp_frame(0): fk(model, q, model.tcp_frame(0))}
    assert ik_solve(model, targets, q) == q


@given(seeds)
def test_ik_self_consistent(seed):
    rng = np.random.default_rng(seed)
    m = build_model(make_template(6, "offset"), DesignParams(0.5, 0.5))
    q0 = home_configuration(m)
    q1 = q0.copy()
    q1.joints += rng.normal(scale=0.2, size=m.n)
    targets = {m.tcp_frame(k): fk(m, q1, m.tcp_frame(k)) for k in range(2)}
    opts = IkOptions()
    q = ik_solve(m, targets, q0, opts)
    assert q.within_limits(m)
    for pos, rot in pose_residuals(m, q, targets).values():
        assert pos <= opts.tol_pos and rot <= opts.tol_rot


def test_ik_unreachable_stalls(model):
    q = home_configuration(model)
    T = fk(model, q, model.root_frame(0)).copy()
    T[:3, 3] += T[:3, 2] * 5.0
    opts = IkOptions(free_base=False, joint_mask=limb_mask(model, 0))
    with pytest.raises(NoConvergence) as exc:
        ik_solve(model, {model.tcp_frame(0): T}, q, opts)
    r = np.asarray(exc.value.residuals)
    assert r[-1] > 3.0 and np.min(r) >= r[0] * 0.5  # stuck far from the target


def test_index_trivial_cases(model):
    assert manipulability_index(np.eye(6)) == pytest.approx(1.0)
    q = model.zero_configuration()  # stretched limbs
    cols = 6 + model.limb_joints[0]
    assert manipulability_index(jacobian(model, q, model.tcp_frame(0)), cols) < 1e-6


@given(seeds)
def test_index_invariant_under_world_rotation(seed):
    rng = np.random.default_rng(seed)
    J = rng.normal(size=(6, 6))
    R = np.eye(6)
    R[:3, :3] = R[3:, 3:] = quat_to_matrix(quat_from_rotvec(rng.normal(size=3)))
    assert manipulability_index(R @ J) == pytest.approx(manipulability_index(J), rel=1e-10)


def test_profile_single_point_and_reversal(model, template):
    P = model.params
    path, _ = nominal_path(template, P, samples=50)
    world = limb_root_path_to_world(model, 0, path)
    one = manipulability_profile(model, world[25:26])
    assert one.shape == (1,) and one[0] > 0
    part = world[20:30]
    fwd = manipulability_profile(model, part)
    rev = manipulability_profile(model, part[::-1], q_seed=None)
    assert np.allclose(rev[::-1], fwd, rtol=1e-6, atol=1e-9)


@pytest.mark.parametrize("dof,ankle", TEMPLATES)
def test_workspace_bounds_basics(dof, ankle):
    t = make_template(dof, ankle)
    P = DesignParams(0.5, 0.45)
    wb = workspace_bounds(t, P, 0.0)
    assert wb.D_min == (t.ankle_offset if ankle == "offset" else 0.0)
    assert wb.R_far == pytest.approx(planar_length(t, P))
    with pytest.raises(HeightExceedsReach):
        workspace_bounds(t, P, planar_length(t, P) + 0.01)


@given(st.floats(0.0, 0.9), st.floats(0.0, 0.9))
def test_far_radius_decreasing(a, b):
    t = make_template(6, "offset")
    P = DesignParams(0.5, 0.5)
    L = planar_length(t, P)
    lo, hi = sorted((a * L, b * L))
    assert workspace_bounds(t, P, lo).R_far >= workspace_bounds(t, P, hi).R_far
