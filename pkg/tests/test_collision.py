import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import seeds
from marm.collision import (World, box_box_distance, capsule_plane_distance, check_collision, point_box_distance,
                            segment_box_distance,
                            segment_box_distance,
                            segment_segment_distance, socket_lattice)
from marm.kinematics import fk, home_configuration
from marm.model import build_model, make_template, DesignParams
from marm.spatial import quat_to_matrix, quat_from_rotvec

NO_GROUND = World(ground_height=None)


def _dense_segment_distance(p1, q1, p2, q2, n=400):
    s = np.linspace(0, 1, n)[:, None]
    a = p1 + s * (q1 - p1)
    b = p2 + s * (q2 - p2)
    return np.min(np.linalg.norm(a[:, None] - b[None], axis=2))


@given(seeds)
def test_segment_distance_against_sampling(seed):
    rng = np.random.default_rng(seed)
    p1, q1, p2, q2 = rng.normal(size=(4, 3))
    d = segment_segment_distance(p1, q1, p2, q2)
    d = d[0] if isinstance(d, tuple) else d
    ref = _dense_segment_distance(p1, q1, p2, q2)
    seg = max(np.linalg.norm(q1 - p1), np.linalg.norm(q2 - p2))
    assert d <= ref + 1e-12
    assert ref - d <= 2 * seg / 399  # sampling resolution


@given(seeds)
def test_point_box_against_sampling(seed):
    rng = np.random.default_rng(seed)
    R = quat_to_matrix(quat_from_rotvec(rng.normal(size=3)))
    c, half = rng.normal(size=3), rng.uniform(0.1, 1.0, 3)
    x = rng.normal(size=3) * 2
    d = point_box_distance(x, c, R, half)
    local = R.T @ (x - c)
    outside = np.maximum(np.abs(local) - half, 0.0)
    assert d == pytest.approx(np.linalg.norm(outside), abs=1e-12)  # unsigned: 0 inside


@given(seeds)
def test_segment_box_against_sampling(seed):
    rng = np.random.default_rng(seed)
    R = quat_to_matrix(quat_from_rotvec(rng.normal(size=3)))
    c, half = rng.normal(size=3) * 0.5, rng.uniform(0.1, 0.6, 3)
    p, q = rng.normal(size=(2, 3)) * 1.5
    s = np.linspace(0, 1, 2001)[:, None]
    ref = point_box_distance(p + s * (q - p), c, R, half).min()
    d = segment_box_distance(p, q, c, R, half)
    assert d <= ref + 1e-12
    assert ref - d <= np.linalg.norm(q - p) / 2000


def test_separated_boxes():
    I = np.eye(3)
    h = np.full(3, 0.5)
    assert box_box_distance(np.zeros(3), I, h, np.array([2.0, 0, 0]), I, h) == pytest.approx(1.0)
    assert box_box_distance(np.zeros(3), I, h, np.array([0.8, 0, 0]), I, h) < 0


def test_capsule_plane():
    a, b = np.array([0, 0, 1.0]), np.array([0, 0, 0.3])
    assert capsule_plane_distance(a, b, 0.1, np.array([0, 0, 1.0]), 0.0) == pytest.approx(0.2)


@pytest.mark.parametrize("dof,ankle", [(6, "offset"), (6, "inline"), (7, "offset")])
def test_zero_configuration_is_collision_free(dof, ankle):
    m = build_model(make_template(dof, ankle), DesignParams(0.5, 0.5))
    assert check_collision(m, m.zero_configuration(), NO_GROUND).ok
    assert check_collision(m, home_configuration(m), NO_GROUND).ok


def test_folded_limb_hits_base(model):
    q = model.zero_configuration()
    q.joints[model.joint_index(0, "hip_pitch")] = -1.0
    q.joints[model.joint_index(0, "knee_pitch")] = -2.4
    rep = check_collision(model, q, NO_GROUND)
    assert any("base" in c and c.startswith("limb0") for c in rep.colliding)


@pytest.mark.parametrize("clearance,hit", [(1e-3, False), (-1e-3, True)])
def test_ground_plane(model, clearance, hit):
    q = home_configuration(model)
    q.base_pos[2] -= fk(model, q, model.tcp_frame(0))[2, 3] - clearance
    rep = check_collision(model, q, World(ground_height=0.0))
    assert (not rep.ok) == hit
    assert rep.min_distance == pytest.approx(clearance, abs=1e-9)


def test_socket_lattice_spacing():
    pts = socket_lattice(1.5)
    d = [np.linalg.norm(a[:2] - b[:2]) for i, a in enumerate(pts) for b in pts[i + 1:]]
    assert min(d) == pytest.approx(1.5)
    assert np.allclose(pts[0][:2], 0.0)
