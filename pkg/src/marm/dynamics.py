"""Floating-base dynamics, contact wrenches and QP inverse dynamics.

All quantities are world-frame.  Generalized forces dual to ``v = [v_base,
w_base, qd]`` are ``[force, moment about the base origin, joint torques]``.
Contact wrenches ``[f; m]`` are applied by the environment on the robot at
the contact frame origin (moment about that point).
"""
from dataclasses import dataclass, field
import csv
import json
import math

import clarabel
import numpy as np
from scipy import sparse

from .errors import Infeasible, NonUnitNormal, SolverFailure
from .kinematics import _frame_pose, forward, jacobian, retract
from .model import GRAVITY
from .trajectory import finite_difference_qdd


def _cross(a, b):
    a0, a1, a2 = a[..., 0], a[..., 1], a[..., 2]
    b0, b1, b2 = b[..., 0], b[..., 1], b[..., 2]
    return np.stack([a1 * b2 - a2 * b1, a2 * b0 - a0 * b2, a0 * b1 - a1 * b0], axis=-1)


# ---------------------------------------------------------------------------
# recursive Newton-Euler


def _motion_pass(model, ks, v, a, gravity):
    """Angular velocity/acceleration and origin linear acceleration for every body.

    Gravity enters as a fictitious upward acceleration of the base.
    """
    n = model.n
    qd, qdd = v[6:], a[6:]
    wb, alb = v[3:6], a[3:6]
    ab = a[0:3] + np.array([0.0, 0.0, gravity])
    w = np.empty((n, 3))
    al = np.empty((n, 3))
    acc = np.empty((n, 3))
    s = ks.axes
    for idx, par, _ in model.levels:
        if par is None:
            wP, alP, aP, pP = wb[None], alb[None], ab[None], ks.base_p[None]
        else:
            wP, alP, aP, pP = w[par], al[par], acc[par], ks.p[par]
        r = ks.p[idx] - pP
        acc[idx] = aP + _cross(alP, r) + _cross(wP, _cross(wP, r))
        sq = s[idx] * qd[idx, None]
        w[idx] = wP + sq
        al[idx] = alP + s[idx] * qdd[idx, None] + _cross(wP, sq)
    return (wb, alb, ab), (w, al, acc)


def rnea(model, q, v, a, gravity=GRAVITY, ks=None):
    """Generalized forces ``M a + h`` (no contacts) by a world-frame Newton-Euler recursion."""
    ks = ks or forward(model, q)
    (wb, alb, ab), (w, al, acc) = _motion_pass(model, ks, v, a, gravity)

    # per-body inertial wrench about the joint origin
    rc = (ks.R @ model.coms[:, :, None])[:, :, 0]
    ac = acc + _cross(al, rc) + _cross(w, _cross(w, rc))
    F = model.masses[:, None] * ac
    Iw = ks.R @ model.inertias @ ks.R.transpose(0, 2, 1)
    Iw_al = (Iw @ al[:, :, None])[:, :, 0]
    Iw_w = (Iw @ w[:, :, None])[:, :, 0]
    N = Iw_al + _cross(w, Iw_w) + _cross(rc, F)

    for idx, par, _ in reversed(model.levels):
        if par is None:
            break
        F[par] += F[idx]
        N[par] += N[idx] + _cross(ks.p[idx] - ks.p[par], F[idx])
    tau = np.einsum("ij,ij->i", ks.axes, N)

    base = model.base_link
    rb = ks.base_R @ np.asarray(base.com_offset)
    Ib = ks.base_R @ np.asarray(base.inertia) @ ks.base_R.T
    Fb = base.mass * (ab + np.cross(alb, rb) + np.cross(wb, np.cross(wb, rb)))
    Nb = Ib @ alb + np.cross(wb, Ib @ wb) + np.cross(rb, Fb)
    top = model.levels[0][0]
    Fb = Fb + F[top].sum(axis=0)
    Nb = Nb + (N[top] + _cross(ks.p[top] - ks.base_p, F[top])).sum(axis=0)
    return np.concatenate([Fb, Nb, tau])


def frame_bias_acceleration(model, q, v, frame, ks=None):
    """``Jdot v`` for a frame: its [linear; angular] acceleration at zero qdd, no gravity."""
    ks = ks or forward(model, q)
    T, body = _frame_pose(model, ks, frame)
    (wb, alb, ab), (w, al, acc) = _motion_pass(model, ks, v, np.zeros(model.nv), 0.0)
    if body < 0:
        wB, alB, aB, pB = wb, alb, ab, ks.base_p
    else:
        wB, alB, aB, pB = w[body], al[body], acc[body], ks.p[body]
    r = T[:3, 3] - pB
    return np.concatenate([aB + np.cross(alB, r) + np.cross(wB, np.cross(wB, r)), alB])


# ---------------------------------------------------------------------------
# mass matrix via body COM Jacobians


def _com_jacobians(model, ks):
    """COM positions, linear/angular COM Jacobians and world inertias; base is the last entry."""
    n, nv = model.n, model.nv
    rc = (ks.R @ model.coms[:, :, None])[:, :, 0]
    c = np.vstack([ks.p + rc, ks.base_p + ks.base_R @ np.asarray(model.base_link.com_offset)])
    Jv = np.zeros((n + 1, 3, nv))
    Jw = np.zeros((n + 1, 3, nv))
    Jv[:, :, 0:3] = np.eye(3)
    d = c - ks.base_p
    # -skew(d) columns
    Jv[:, 0, 4], Jv[:, 0, 5] = d[:, 2], -d[:, 1]
    Jv[:, 1, 3], Jv[:, 1, 5] = -d[:, 2], d[:, 0]
    Jv[:, 2, 3], Jv[:, 2, 4] = d[:, 1], -d[:, 0]
    Jw[:, :, 3:6] = np.eye(3)
    anc = model.ancestors
    lever = c[:n, None, :] - ks.p[None, :, :]  # (i, j, 3)
    cols = _cross(np.broadcast_to(ks.axes[None], lever.shape), lever) * anc[:, :, None]
    Jv[:n, :, 6:] = cols.transpose(0, 2, 1)
    Jw[:n, :, 6:] = (np.broadcast_to(ks.axes[None], lever.shape) * anc[:, :, None]).transpose(0, 2, 1)
    Iw = np.empty((n + 1, 3, 3))
    Iw[:n] = ks.R @ model.inertias @ ks.R.transpose(0, 2, 1)
    Iw[n] = ks.base_R @ np.asarray(model.base_link.inertia) @ ks.base_R.T
    m = np.append(model.masses, model.base_link.mass)
    return c, Jv, Jw, Iw, m


def mass_matrix(model, q, ks=None):
    ks = ks or forward(model, q)
    _, Jv, Jw, Iw, m = _com_jacobians(model, ks)
    M = np.einsum("bki,b,bkj->ij", Jv, m, Jv) + np.einsum("bki,bkl,blj->ij", Jw, Iw, Jw)
    return 0.5 * (M + M.T)


def coriolis_matrix(model, q, v, ks=None):
    """A Coriolis matrix ``C`` with ``C v = h - g`` and ``Mdot - 2C`` skew-symmetric."""
    ks = ks or forward(model, q)
    n = model.n
    c, Jv, Jw, Iw, m = _com_jacobians(model, ks)
    cdot = Jv @ v  # (n+1, 3)
    wbody = Jw @ v
    # joint-origin velocities and joint-axis rates
    (wb, _, _), (w, _, _) = _motion_pass(model, ks, v, np.zeros(model.nv), 0.0)
    pdot = np.empty((n, 3))
    for idx, par, _ in model.levels:
        if par is None:
            pdot[idx] = v[0:3] + _cross(wb[None], ks.p[idx] - ks.base_p)
        else:
            pdot[idx] = pdot[par] + _cross(w[par], ks.p[idx] - ks.p[par])
    wpar = np.empty((n, 3))
    for idx, par, _ in model.levels:
        wpar[idx] = wb if par is None else w[par]
    adot = _cross(wpar, ks.axes)  # joint axes rotate with the parent

    Jvd = np.zeros_like(Jv)
    Jwd = np.zeros_like(Jw)
    dd = cdot - v[0:3]
    Jvd[:, 0, 4], Jvd[:, 0, 5] = dd[:, 2], -dd[:, 1]
    Jvd[:, 1, 3], Jvd[:, 1, 5] = -dd[:, 2], dd[:, 0]
    Jvd[:, 2, 3], Jvd[:, 2, 4] = dd[:, 1], -dd[:, 0]
    anc = model.ancestors[:, :, None]
    lever = c[:n, None, :] - ks.p[None, :, :]
    lever_dot = cdot[:n, None, :] - pdot[None, :, :]
    A = np.broadcast_to(ks.axes[None], lever.shape)
    Ad = np.broadcast_to(adot[None], lever.shape)
    Jvd[:n, :, 6:] = ((_cross(Ad, lever) + _cross(A, lever_dot)) * anc).transpose(0, 2, 1)
    Jwd[:n, :, 6:] = (Ad * anc).transpose(0, 2, 1)

    W = np.zeros((n + 1, 3, 3))
    W[:, 0, 1], W[:, 0, 2] = -wbody[:, 2], wbody[:, 1]
    W[:, 1, 0], W[:, 1, 2] = wbody[:, 2], -wbody[:, 0]
    W[:, 2, 0], W[:, 2, 1] = -wbody[:, 1], wbody[:, 0]
    return (
        np.einsum("bki,b,bkj->ij", Jv, m, Jvd)
        + np.einsum("bki,bkl,blj->ij", Jw, Iw, Jwd)
        + np.einsum("bki,bkl,blm,bmj->ij", Jw, W, Iw, Jw)
    )


@dataclass
class DynamicsTerms:
    M: np.ndarray
    h: np.ndarray
    g: np.ndarray


def dynamics_terms(model, q, qd, gravity=GRAVITY):
    ks = forward(model, q)
    zero = np.zeros(model.nv)
    qd = np.asarray(qd, dtype=float)
    g = rnea(model, q, zero, zero, gravity, ks)
    h = g.copy() if not np.any(qd) else rnea(model, q, qd, zero, gravity, ks)
    return DynamicsTerms(mass_matrix(model, q, ks), h, g)


def gravity_vector(model, q, gravity=GRAVITY, ks=None):
    """Generalized gravity force (all nv rows): the gradient of the potential energy."""
    ks = ks or forward(model, q)
    _, Jv, _, _, m = _com_jacobians(model, ks)
    return gravity * (m @ Jv[:, 2, :])


def gravity_torque(model, q, gravity=GRAVITY):
    zero = np.zeros(model.nv)
    return rnea(model, q, zero, zero, gravity)[6:]


def potential_energy(model, q, gravity=GRAVITY):
    ks = forward(model, q)
    c, *_, m = _com_jacobians(model, ks)
    return float(gravity * (m @ c[:, 2]))


def kinetic_energy(model, q, v):
    return 0.5 * float(v @ mass_matrix(model, q) @ v)


# ---------------------------------------------------------------------------
# contacts and wrench limits

DEGENERATE_EPS = 1e-12


def cone_rotation(n):
    """Rotation taking the contact normal ``n`` to ``e_z`` (rows: tangent, bitangent, normal)."""
    n = np.asarray(n, dtype=float)
    norm = float(np.linalg.norm(n))
    if not abs(norm - 1.0) <= 1e-9:
        raise NonUnitNormal(f"normal must be unit length, got norm {norm}")
    nx, ny, nz = n / norm
    rho2 = nx * nx + ny * ny
    if rho2 < DEGENERATE_EPS:
        if nz > 0:
            return np.eye(3)
        return np.diag([1.0, -1.0, -1.0])  # half turn about x
    rho = math.sqrt(rho2)
    return np.array(
        [
            [ny / rho, -nx / rho, 0.0],
            [nx * nz / rho, ny * nz / rho, -rho],
            [nx, ny, nz],
        ]
    )


@dataclass(frozen=True)
class Contact:
    """A frame pinned to a socket pose.  ``model`` is "latched" (6D wrench) or "unilateral" (3D force)."""

    frame: str
    pose: np.ndarray = field(compare=False)
    model: str = "latched"
    mu: float = 0.5

    def __post_init__(self):
        if self.model not in ("latched", "unilateral"):
            raise ValueError(f"contact model must be latched or unilateral, got {self.model!r}")
        if self.model == "unilateral" and not self.mu > 0:
            raise ValueError("friction coefficient must be positive")

    @property
    def normal(self):
        # the socket frame z points into the socket; the environment pushes back along -z
        return -np.asarray(self.pose, dtype=float)[:3, 2]

    @property
    def dim(self):
        return 6 if self.model == "latched" else 3


def contact_set(*contacts):
    names = [c.frame for c in contacts]
    if len(set(names)) != len(names):
        raise ValueError("contact frames must be unique")
    return list(contacts)


@dataclass(frozen=True)
class Wrench:
    force: np.ndarray
    torque: np.ndarray
    frame: str = ""

    def vector(self):
        return np.concatenate([self.force, self.torque])


@dataclass(frozen=True)
class WrenchLimits:
    max_compression: float = 5000.0
    max_radial: float = 5000.0
    max_axial_torque: float = 420.0
    max_bending: float = 150.0

    def __post_init__(self):
        if min(self.max_compression, self.max_radial, self.max_axial_torque, self.max_bending) <= 0:
            raise ValueError("wrench limits must be positive")


@dataclass
class WrenchVerdict:
    ok: bool
    compression: float
    radial: float
    axial_torque: float
    bending: float
    margins: dict
    failed: list


def check_wrench_limits(w, n, limits=None):
    limits = limits or WrenchLimits()
    R = cone_rotation(n)
    f = R @ np.asarray(w.force, dtype=float)
    m = R @ np.asarray(w.torque, dtype=float)
    vals = {
        "compression": max(0.0, float(f[2])),
        "radial": float(math.hypot(f[0], f[1])),
        "axial_torque": abs(float(m[2])),
        "bending": float(math.hypot(m[0], m[1])),
    }
    lim = {
        "compression": limits.max_compression,
        "radial": limits.max_radial,
        "axial_torque": limits.max_axial_torque,
        "bending": limits.max_bending,
    }
    margins = {k: lim[k] - vals[k] for k in vals}
    failed = [k for k in vals if margins[k] < 0]
    return WrenchVerdict(not failed, vals["compression"], vals["radial"], vals["axial_torque"], vals["bending"], margins, failed)


def contact_jacobian(model, q, contacts, ks=None):
    ks = ks or forward(model, q)
    if not contacts:
        return np.zeros((0, model.nv))
    return np.vstack([jacobian(model, q, c.frame, ks) for c in contacts])


# ---------------------------------------------------------------------------
# QP inverse dynamics

POLYGON_FACETS = 16


def _disk_rows(R0, R1, radius):
    """Inscribed polygon for ||(R0 x, R1 x)|| <= radius as rows G x <= h."""
    th = 2.0 * math.pi * np.arange(POLYGON_FACETS) / POLYGON_FACETS
    G = np.cos(th)[:, None] * R0[None] + np.sin(th)[:, None] * R1[None]
    return G, np.full(POLYGON_FACETS, radius * math.cos(math.pi / POLYGON_FACETS))


def _contact_rows(c, limits):
    """Inequalities on one contact's wrench components (in world axes)."""
    R = cone_rotation(c.normal)
    if c.model == "unilateral":
        k = c.mu / math.sqrt(2.0)  # square pyramid inscribed in the cone
        G = np.array([R[0] - k * R[2], -R[0] - k * R[2], R[1] - k * R[2], -R[1] - k * R[2], -R[2]])
        h = np.zeros(5)
        if limits is not None:
            G = np.vstack([G, R[2]])
            h = np.append(h, limits.max_compression)
        return G, h
    if limits is None:
        return np.zeros((0, 6)), np.zeros(0)
    Z = np.zeros(3)
    Gf, hf = _disk_rows(R[0], R[1], limits.max_radial)
    Gm, hm = _disk_rows(R[0], R[1], limits.max_bending)
    rows = [np.hstack([Gf, np.zeros_like(Gf)]), np.hstack([np.zeros_like(Gm), Gm])]
    rows.append(np.array([np.hstack([R[2], Z]), np.hstack([-R[2], Z]), np.hstack([Z, R[2]]), np.hstack([Z, -R[2]])]))
    h = np.concatenate([hf, hm, [limits.max_compression, limits.max_compression, limits.max_axial_torque, limits.max_axial_torque]])
    return np.vstack(rows), h


@dataclass
class IdSolution:
    qdd: np.ndarray
    wrenches: list
    tau: np.ndarray
    qp_cost: float
    residual: float  # dynamics residual ||M qdd + h - Jc^T f - S^T tau||
    kkt_residual: float = 0.0
    f: np.ndarray = None
    active: list = field(default_factory=list)


@dataclass
class _QP:
    P: np.ndarray
    c: np.ndarray
    A: np.ndarray
    b: np.ndarray
    G: np.ndarray
    h: np.ndarray
    labels: list


def _build_qp(model, q, qd, qdd_ref, contacts, limits, torque_limits, gravity, w_f):
    ks = forward(model, q)
    nv = model.nv
    terms_h = rnea(model, q, qd, np.zeros(nv), gravity, ks)
    M = mass_matrix(model, q, ks)
    dims = [c.dim for c in contacts]
    nf = sum(dims)
    Jc = np.zeros((nf, nv))
    bias = np.zeros(nf)
    row = 0
    for c, d in zip(contacts, dims):
        J = jacobian(model, q, c.frame, ks)
        a = frame_bias_acceleration(model, q, qd, c.frame, ks)
        Jc[row : row + d] = J[:d]
        bias[row : row + d] = a[:d]
        row += d
    nx = nv + nf
    P = np.zeros((nx, nx))
    P[:nv, :nv] = 2.0 * np.eye(nv)
    P[nv:, nv:] = 2.0 * w_f * np.eye(nf)
    cvec = np.concatenate([-2.0 * np.asarray(qdd_ref, dtype=float), np.zeros(nf)])
    # unactuated rows of M qdd + h = Jc^T f, then rigid contacts
    A = np.vstack([np.hstack([M[:6], -Jc.T[:6]]), np.hstack([Jc, np.zeros((nf, nf))])])
    b = np.concatenate([-terms_h[:6], -bias])

    G_rows, h_rows, labels = [], [], []
    col = nv
    for c, d in zip(contacts, dims):
        Gc, hc = _contact_rows(c, limits)
        if len(hc):
            G = np.zeros((len(hc), nx))
            G[:, col : col + d] = Gc
            G_rows.append(G)
            h_rows.append(hc)
            labels += [f"wrench:{c.frame}"] * len(hc)
        col += d
    if torque_limits:
        T = np.hstack([M[6:], -Jc.T[6:]])
        tmax = model.torque_limits
        G_rows += [T, -T]
        h_rows += [tmax - terms_h[6:], tmax + terms_h[6:]]
        labels += [f"torque:{nm}" for nm in model.joint_names] * 2
    G = np.vstack(G_rows) if G_rows else np.zeros((0, nx))
    h = np.concatenate(h_rows) if h_rows else np.zeros(0)
    return _QP(P, cvec, A, b, G, h, labels), M, terms_h, Jc


def _kkt_solve(P, c, A, b):
    nx, m = P.shape[0], A.shape[0]
    K = np.zeros((nx + m, nx + m))
    K[:nx, :nx] = P
    K[:nx, nx:] = A.T
    K[nx:, :nx] = A
    rhs = np.concatenate([-c, b])
    try:
        sol = np.linalg.solve(K, rhs)
        if not np.all(np.isfinite(sol)):
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    return sol[:nx], sol[nx:]


def _clarabel(qp):
    nx = qp.P.shape[0]
    Aall = sparse.csc_matrix(np.vstack([qp.A, qp.G]))
    ball = np.concatenate([qp.b, qp.h])
    cones = [clarabel.ZeroConeT(len(qp.b))]
    if len(qp.h):
        cones.append(clarabel.NonnegativeConeT(len(qp.h)))
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.tol_gap_abs = settings.tol_gap_rel = 1e-10
    settings.tol_feas = 1e-10
    settings.max_iter = 200
    solver = clarabel.DefaultSolver(sparse.triu(sparse.csc_matrix(qp.P)).tocsc(), qp.c, Aall, ball, cones, settings)
    sol = solver.solve()
    status = str(sol.status)
    x = np.array(sol.x)
    z = np.array(sol.z)
    return status, x, z[: len(qp.b)], z[len(qp.b) :]


def _polish(qp, x, mu, tol=1e-9):
    """Re-solve with the identified active inequalities as equalities."""
    slack = qp.h - qp.G @ x
    scale = 1.0 + np.abs(qp.h)
    active = np.flatnonzero((mu > 1e-7 * max(1.0, np.abs(mu).max(initial=0.0))) | (slack < 1e-6 * scale))
    A = np.vstack([qp.A, qp.G[active]])
    b = np.concatenate([qp.b, qp.h[active]])
    xp, lam = _kkt_solve(qp.P, qp.c, A, b)
    lam_act = lam[len(qp.b) :]
    if np.all(qp.G @ xp <= qp.h + tol * scale) and np.all(lam_act >= -1e-8 * max(1.0, np.abs(lam_act).max(initial=0.0))):
        mu_full = np.zeros(len(qp.h))
        mu_full[active] = np.maximum(lam_act, 0.0)
        return xp, lam[: len(qp.b)], mu_full, active
    return None


def _stationarity(qp, x, lam, mu):
    g = qp.P @ x + qp.c + qp.A.T @ lam
    if len(mu):
        g = g + qp.G.T @ mu
    return float(np.linalg.norm(g))


def _violations(qp, x):
    viol = qp.G @ x - qp.h
    bad = np.flatnonzero(viol > 1e-9 * (1.0 + np.abs(qp.h)))
    return sorted({qp.labels[i] for i in bad})


def solve_id_qp(model, q, qd, qdd_ref, contacts=(), limits=None, torque_limits=True, gravity=GRAVITY, w_f=1e-6):
    """Accelerations, contact wrenches and torques closest to ``qdd_ref``.

    Equality-only problems (no limit active) are solved by one KKT system;
    otherwise an interior-point QP (Clarabel) finds the active set and the
    result is polished on it.  Pass ``limits=None`` to skip latched wrench
    boxes and ``torque_limits=False`` to skip actuator bounds.
    """
    contacts = list(contacts)
    qd = np.asarray(qd, dtype=float)
    qp, M, h, Jc = _build_qp(model, q, qd, qdd_ref, contacts, limits, torque_limits, gravity, w_f)
    x, lam = _kkt_solve(qp.P, qp.c, qp.A, qp.b)
    mu = np.zeros(len(qp.h))
    active = []
    if len(qp.h) and np.any(qp.G @ x > qp.h + 1e-9 * (1.0 + np.abs(qp.h))):
        status, xc, lam_c, mu_c = _clarabel(qp)
        if "Infeasible" in status:
            # locate the culprit limits from the unconstrained optimum
            raise Infeasible("inverse-dynamics QP infeasible", {"violated": _violations(qp, x), "status": status})
        if "Solved" not in status:
            raise SolverFailure(f"QP solver status {status}")
        pol = _polish(qp, xc, mu_c)
        if pol is None:
            x, lam, mu = xc, lam_c, mu_c
        else:
            x, lam, mu, act = pol
            active = sorted({qp.labels[i] for i in act})
    nv = model.nv
    qdd, f = x[:nv], x[nv:]
    gen = M @ qdd + h - Jc.T @ f
    tau = gen[6:].copy()
    residual = float(np.linalg.norm(gen[:6]))
    wrenches = []
    row = 0
    for c in contacts:
        if c.dim == 6:
            wrenches.append(Wrench(f[row : row + 3].copy(), f[row + 3 : row + 6].copy(), c.frame))
        else:
            wrenches.append(Wrench(f[row : row + 3].copy(), np.zeros(3), c.frame))
        row += c.dim
    cost = float(np.sum((qdd - qdd_ref) ** 2) + w_f * f @ f)
    return IdSolution(qdd, wrenches, tau, cost, residual, _stationarity(qp, x, lam, mu), f, active)


# ---------------------------------------------------------------------------
# integration


def integrate(q, qd, qdd, dt):
    """Semi-implicit Euler step; the base orientation moves on SO(3) and stays unit."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    qd_new = np.asarray(qd, dtype=float) + np.asarray(qdd, dtype=float) * dt
    return retract(q, qd_new * dt), qd_new


def forward_dynamics(model, q, qd, tau=None, gravity=GRAVITY):
    """Contact-free accelerations ``M^-1 (S^T tau - h)``."""
    terms = dynamics_terms(model, q, qd, gravity)
    rhs = -terms.h
    if tau is not None:
        rhs[6:] += tau
    return np.linalg.solve(terms.M, rhs)


# ---------------------------------------------------------------------------
# trajectory evaluation


@dataclass
class LoadReport:
    joint_names: list
    contact_frames: list
    t: np.ndarray
    tau: np.ndarray  # (N, n)
    wrenches: np.ndarray  # (N, k, 6)
    wrench_checks: np.ndarray  # (N, k, 4): compression, radial, axial, bending
    violations: list  # dicts: t, knot, kind, name, value, limit
    torque_limits: np.ndarray
    residual_max: float = 0.0

    @property
    def ok(self):
        return not self.violations

    def peak_torque(self):
        return np.abs(self.tau).max(axis=0) if len(self.t) else np.zeros(len(self.joint_names))

    def torque_percentile(self, p):
        return np.percentile(np.abs(self.tau), p, axis=0)

    def peak_wrench_checks(self):
        return self.wrench_checks.max(axis=0) if len(self.t) else np.zeros((len(self.contact_frames), 4))

    def to_dict(self):
        peaks = self.peak_torque()
        p95 = self.torque_percentile(95)
        wpk = self.peak_wrench_checks()
        return {
            "joints": [
                {"name": nm, "peak_abs_torque": float(pk), "p95_abs_torque": float(p), "torque_limit": float(lim)}
                for nm, pk, p, lim in zip(self.joint_names, peaks, p95, self.torque_limits)
            ],
            "contacts": [
                {
                    "frame": fr,
                    "peak_compression": float(w[0]),
                    "peak_radial": float(w[1]),
                    "peak_axial_torque": float(w[2]),
                    "peak_bending": float(w[3]),
                }
                for fr, w in zip(self.contact_frames, wpk)
            ],
            "violations": self.violations,
            "max_dynamics_residual": float(self.residual_max),
            "ok": self.ok,
        }

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    def write_csv(self, path):
        comps = ["fx", "fy", "fz", "mx", "my", "mz"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"tau_{nm}" for nm in self.joint_names] + [f"{fr}_{c}" for fr in self.contact_frames for c in comps])
            for k in range(len(self.t)):
                w.writerow([repr(float(self.t[k]))] + [repr(float(x)) for x in self.tau[k]] + [repr(float(x)) for x in self.wrenches[k].reshape(-1)])


def _within_limits(model, sol, contacts, limits):
    if np.any(np.abs(sol.tau) > model.torque_limits * (1 + 1e-9)):
        return False
    return all(check_wrench_limits(w, c.normal, limits).ok for c, w in zip(contacts, sol.wrenches))


def evaluate_trajectory(model, traj, contacts, limits=None, gravity=GRAVITY, smooth=False):
    """Replay a trajectory through the inverse-dynamics QP and gate the loads.

    The reference accelerations come from differencing the knot positions.
    Limits may only redistribute contact wrenches: if honouring them would
    change the accelerations (or is impossible), the unlimited loads are
    reported so the violation shows up rather than being hidden.
    """
    limits = limits or WrenchLimits()
    contacts = list(contacts)
    qdd_ref = finite_difference_qdd(traj, smooth)
    N, n, k = len(traj), model.n, len(contacts)
    tau = np.zeros((N, n))
    W = np.zeros((N, k, 6))
    checks = np.zeros((N, k, 4))
    violations = []
    res_max = 0.0
    lim = model.torque_limits
    for i in range(N):
        q = traj.config(i)
        sol = solve_id_qp(model, q, traj.qd[i], qdd_ref[i], contacts, None, False, gravity)
        if not _within_limits(model, sol, contacts, limits):
            try:
                lim_sol = solve_id_qp(model, q, traj.qd[i], qdd_ref[i], contacts, limits, True, gravity)
                if np.allclose(lim_sol.qdd, sol.qdd, rtol=1e-6, atol=1e-6):
                    sol = lim_sol
            except Infeasible:
                pass
        res_max = max(res_max, sol.residual)
        tau[i] = sol.tau
        for j, (c, w) in enumerate(zip(contacts, sol.wrenches)):
            W[i, j] = w.vector()
            v = check_wrench_limits(w, c.normal, limits)
            checks[i, j] = (v.compression, v.radial, v.axial_torque, v.bending)
            for name in v.failed:
                violations.append(
                    {"t": float(traj.t[i]), "knot": i, "kind": "wrench", "name": f"{c.frame}:{name}",
                     "value": float(getattr(v, name)), "limit": float(getattr(v, name) + v.margins[name])}
                )
        over = np.flatnonzero(np.abs(sol.tau) > lim * (1 + 1e-9))
        for j in over:
            violations.append(
                {"t": float(traj.t[i]), "knot": i, "kind": "torque", "name": model.joint_names[j],
                 "value": float(sol.tau[j]), "limit": float(lim[j])}
            )
    return LoadReport(list(model.joint_names), [c.frame for c in contacts], traj.t.copy(), tau, W, checks, violations, lim.copy(), res_max)
