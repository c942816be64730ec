"""Quasi-static trajectory optimization for single-stance relocations.

Direct transcription over N knots.  Each knot carries a configuration in
chart coordinates (base position, base rotation vector relative to a
reference orientation, joints), the stance wrench and the joint torques.
The NLP is solved by a sequential QP method: constraints are linearized by
finite differences, the cost uses a Gauss-Newton Hessian, every subproblem
is a sparse convex QP (Clarabel) inside a box trust region, and steps are
accepted on an l1 merit function.
"""
from dataclasses import dataclass, field, replace
import math
import time

import clarabel
import numpy as np
from scipy import sparse

from .collision import CollisionChecker, World
from .dynamics import Contact, WrenchLimits, _contact_rows, check_wrench_limits, gravity_vector, rnea, Wrench
from .errors import GeometryInvalid, Infeasible, NotConverged, ProjectionFailed
from .kinematics import Configuration, _frame_pose, difference, fk, forward, jacobian, point_jacobian
from .model import GRAVITY, stretched_reach
from .planner import Chart, pivot_configuration, project_to_manifold, time_parameterize
from .spatial import matrix_to_quat, pose_error, rotz
from .trajectory import Trajectory, finite_difference_qdd


@dataclass
class TrajOptOptions:
    N: int = 30
    dt: float = 0.2
    w_motion: float = 1.0
    w_tilt: float = 10.0
    w_f: float = 1e-6
    w_col: float = 1e4
    self_margin: float = 0.02  # soft self-collision margin (m)
    world_margin: float = 0.0  # soft margin against ground and sockets
    torque_margin: float = 0.9  # fraction of the torque limit the optimizer may use
    wrench_margin: float = 0.95
    tol_feas: float = 1e-4
    tol_opt: float = 1e-4
    max_iters: int = 150
    trust_radius: float = 0.3
    time_budget_s: float = 600.0
    fd_eps: float = 1e-6


@dataclass
class TranscriptionProblem:
    model: object
    stance: Contact
    swing_frame: str
    swing_from: np.ndarray
    swing_to: np.ndarray
    gravity: float
    options: TrajOptOptions
    world: World = None
    seed_start: Configuration = None
    seed_goal: Configuration = None
    limits: WrenchLimits = field(default_factory=WrenchLimits)

    def __post_init__(self):
        self.chart = Chart(np.eye(3))
        m = self.model
        self.nv, self.n = m.nv, m.n
        self.nz = self.nv + 6 + self.n
        world = self.world if self.world is not None else World(ground_height=None)
        self.checker = CollisionChecker(m, world, cutoff=0.1)
        n_self = sum(len(g[1]) for g in self.checker.groups[:3])
        self.n_self = n_self
        n_pairs = len(self.checker.labels)
        margins = np.where(np.arange(n_pairs) < n_self, self.options.self_margin, self.options.world_margin)
        self.margins = np.tile(margins, (self.options.N, 1))  # (N, pairs)
        # latched feet rest on their sockets: the stance foot at every knot,
        # the swing foot at the two boundary knots
        link = {i: m.joint_names[m.limb_joints[i][-1]] + "_link" for i in range(3)}
        stance_foot = next(link[i] for i in range(3) if m.tcp_frame(i) == self.stance.frame)
        swing_foot = next(link[i] for i in range(3) if m.tcp_frame(i) == self.swing_frame)
        for k, lab in enumerate(self.checker.labels):
            a, _, b = lab.partition("|")
            if not b.startswith("socket"):
                continue
            if a.split("#")[0] == stance_foot:
                self.margins[:, k] = -np.inf
            elif a.split("#")[0] == swing_foot:
                self.margins[[0, -1], k] = -np.inf
        G, h = _contact_rows(self.stance, self.limits)
        self.wrench_G, self.wrench_h = G, h * self.options.wrench_margin

    @property
    def N(self):
        return self.options.N

    @property
    def dt(self):
        return self.options.dt


@dataclass
class SolveStats:
    converged: bool
    iterations: int
    constraint_violation: float
    cost: float
    optimality: float = math.inf
    message: str = ""
    merit_history: list = field(default_factory=list)
    wall_time: float = 0.0

    def to_dict(self):
        return {
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "constraint_violation": float(self.constraint_violation),
            "cost": float(self.cost),
            "optimality": float(self.optimality),
            "message": self.message,
        }


@dataclass
class TrajOptResult:
    trajectory: Trajectory
    wrenches: np.ndarray  # (N, 6) stance wrench (world axes, moment about the TCP)
    tau: np.ndarray  # (N, n)
    stats: SolveStats
    z: np.ndarray = None


def _as_pose(T, label):
    T = np.asarray(T, dtype=float)
    if T.shape != (4, 4) or not np.all(np.isfinite(T)):
        raise GeometryInvalid(f"{label} must be a finite 4x4 pose")
    R = T[:3, :3]
    if not np.allclose(R.T @ R, np.eye(3), atol=1e-6) or np.linalg.det(R) < 0:
        raise GeometryInvalid(f"{label} rotation is not in SO(3)")
    return T


def build_single_stance_problem(model, stance_socket, swing_from, swing_to, gravity=True, stance_limb=0, swing_limb=1,
                                world=None, options=None, seed_start=None, seed_goal=None, limits=None):
    """Transcribe a swing of ``swing_limb`` between two sockets while ``stance_limb`` stays latched.

    ``stance_socket``, ``swing_from`` and ``swing_to`` are 4x4 TCP poses.
    A tile payload, when wanted, is attached to the model beforehand.
    """
    options = options or TrajOptOptions()
    if options.N < 2 or options.dt <= 0:
        raise GeometryInvalid("need N >= 2 knots and a positive dt")
    if stance_limb == swing_limb:
        raise GeometryInvalid("stance and swing limb must differ")
    stance = Contact(model.tcp_frame(stance_limb), _as_pose(stance_socket, "stance_socket"))
    g = GRAVITY if gravity is True else (0.0 if gravity is False else float(gravity))
    return TranscriptionProblem(
        model, stance, model.tcp_frame(swing_limb), _as_pose(swing_from, "swing_from"), _as_pose(swing_to, "swing_to"),
        g, options, world, seed_start, seed_goal, limits or WrenchLimits(),
    )


# ---------------------------------------------------------------------------
# residuals


def _tilt_residual(R):
    """Rotation vector of the shortest turn taking the base z axis to world z (its norm is the tilt angle)."""
    z = R[:, 2]
    c = np.cross(z, np.array([0.0, 0.0, 1.0]))
    s = float(np.linalg.norm(c))
    ang = math.atan2(s, float(z[2]))
    if s < 1e-12:
        return np.zeros(3) if z[2] > 0 else np.array([math.pi, 0.0, 0.0])
    return ang * c / s


def tilt_angle(q):
    return float(math.acos(np.clip(q.R[2, 2], -1.0, 1.0)))


def quasi_static_residual(model, q, f, tau, contacts=None, gravity=GRAVITY):
    """Equilibrium defect ||g(q) - Jc^T f - S^T tau|| for the stacked contact wrenches ``f``."""
    ks = forward(model, q)
    zero = np.zeros(model.nv)
    r = rnea(model, q, zero, zero, gravity, ks)
    f = np.asarray(f, dtype=float).reshape(-1)
    if contacts:
        Jc = np.vstack([jacobian(model, q, c.frame, ks) for c in contacts])
        r = r - Jc.T @ f
    r[6:] -= np.asarray(tau, dtype=float)
    return float(np.linalg.norm(r))


def _knot_terms(prob, x, f, boundary):
    """(equilibrium residual without tau, stance error, swing error or None, tilt residual, Jc)."""
    m = prob.model
    q = prob.chart.to_q(x)
    ks = forward(m, q)
    g = gravity_vector(m, q, prob.gravity, ks)
    T_st, b_st = _frame_pose(m, ks, prob.stance.frame)
    Jc = point_jacobian(m, ks, b_st, T_st[:3, 3])
    eq = g - Jc.T @ f
    st = pose_error(T_st, prob.stance.pose)
    sw = None
    if boundary is not None:
        T_sw, _ = _frame_pose(m, ks, prob.swing_frame)
        sw = pose_error(T_sw, boundary)
    return eq, st, sw, _tilt_residual(q.R), Jc


# equilibrium rows are scaled to keep them comparable with pose errors in the QP
EQ_SCALE = 1e-2


class _Transcription:
    def __init__(self, prob):
        self.p = prob
        m = prob.model
        self.N, self.nv, self.n, self.nz = prob.N, prob.nv, prob.n, prob.nz
        self.ix = [slice(k * self.nz, k * self.nz + self.nv) for k in range(self.N)]
        self.iff = [slice(k * self.nz + self.nv, k * self.nz + self.nv + 6) for k in range(self.N)]
        self.it = [slice(k * self.nz + self.nv + 6, (k + 1) * self.nz) for k in range(self.N)]
        self.tmax = m.torque_limits * prob.options.torque_margin

    def split(self, z):
        Z = z.reshape(self.N, self.nz)
        return Z[:, : self.nv], Z[:, self.nv : self.nv + 6], Z[:, self.nv + 6 :]

    def boundary(self, k):
        if k == 0:
            return self.p.swing_from
        if k == self.N - 1:
            return self.p.swing_to
        return None

    # -- evaluation -----------------------------------------------------------
    def constraints(self, z):
        """Raw equality residuals per knot: list of (equilibrium nv, stance 6, swing 6 or empty)."""
        X, F, T = self.split(z)
        out = []
        for k in range(self.N):
            eq, st, sw, _, _ = _knot_terms(self.p, X[k], F[k], self.boundary(k))
            eq = eq.copy()
            eq[6:] -= T[k]
            out.append((eq, st, sw if sw is not None else np.zeros(0)))
        return out

    def eq_vector(self, cons):
        return np.concatenate([np.concatenate([EQ_SCALE * e, s, w]) for e, s, w in cons])

    def ineq_violation(self, z):
        X, F, T = self.split(z)
        m = self.p.model
        v = np.maximum(np.abs(T) - self.tmax, 0.0).sum()
        v += np.maximum(F @ self.p.wrench_G.T - self.p.wrench_h, 0.0).sum()
        v += np.maximum(m.lower - X[:, 6:], 0.0).sum() + np.maximum(X[:, 6:] - m.upper, 0.0).sum()
        return float(v)

    def distances(self, X):
        qs = [self.p.chart.to_q(x) for x in X]
        return self.p.checker.distances(qs)

    def cost(self, z, d=None):
        o = self.p.options
        X, F, _ = self.split(z)
        c = o.w_motion * float(np.sum(np.diff(X, axis=0) ** 2))
        c += o.w_tilt * sum(float(np.sum(_tilt_residual(self.p.chart.to_q(x).R) ** 2)) for x in X)
        c += o.w_f * float(np.sum(F**2))
        if d is None:
            d = self.distances(X)
        c += o.w_col * float(np.sum(np.maximum(self.p.margins - d, 0.0) ** 2))
        return c

    def merit(self, z, mu):
        cons = self.constraints(z)
        return self.cost(z) + mu * (np.abs(self.eq_vector(cons)).sum() + self.ineq_violation(z)), cons

    # -- linearization ----------------------------------------------------------
    def linearize(self, z):
        p, o = self.p, self.p.options
        X, F, T = self.split(z)
        N, nv, n, nz = self.N, self.nv, self.n, self.nz
        eps = o.fd_eps
        rows_A, rows_b = [], []
        tilt_J, tilt_r = [], []
        # perturbed configurations for the collision gradient, batched
        Xp = np.repeat(X[:, None, :], nv + 1, axis=1)
        Xp[:, 1:, :] += eps * np.eye(nv)[None]
        D = self.distances(Xp.reshape(-1, nv)).reshape(N, nv + 1, -1)
        d0 = D[:, 0, :]
        dgrad = (D[:, 1:, :] - d0[:, None, :]) / eps  # (N, nv, pairs)
        for k in range(N):
            bnd = self.boundary(k)
            eq0, st0, sw0, ti0, Jc = _knot_terms(p, X[k], F[k], bnd)
            Jeq = np.zeros((nv, nv))
            Jst = np.zeros((6, nv))
            Jsw = np.zeros((6, nv)) if bnd is not None else None
            Jti = np.zeros((3, nv))
            for i in range(nv):
                xp = X[k].copy()
                xp[i] += eps
                eq, st, sw, ti, _ = _knot_terms(p, xp, F[k], bnd)
                Jeq[:, i] = (eq - eq0) / eps
                Jst[:, i] = (st - st0) / eps
                Jti[:, i] = (ti - ti0) / eps
                if bnd is not None:
                    Jsw[:, i] = (sw - sw0) / eps
            eq0 = eq0.copy()
            eq0[6:] -= T[k]
            # equilibrium: d(eq)/dx dx - Jc^T df - S^T dtau = -eq0
            Ak = np.zeros((nv, nz))
            Ak[:, :nv] = Jeq
            Ak[:, nv : nv + 6] = -Jc.T
            Ak[6:, nv + 6 :] = -np.eye(n)
            blocks = [(EQ_SCALE * Ak, -EQ_SCALE * eq0)]
            Bk = np.zeros((6, nz))
            Bk[:, :nv] = Jst
            blocks.append((Bk, -st0))
            if bnd is not None:
                Ck = np.zeros((6, nz))
                Ck[:, :nv] = Jsw
                blocks.append((Ck, -sw0))
            for A_, b_ in blocks:
                full = sparse.lil_matrix((A_.shape[0], N * nz))
                full[:, k * nz : (k + 1) * nz] = A_
                rows_A.append(full.tocsr())
                rows_b.append(b_)
            tilt_J.append(Jti)
            tilt_r.append(ti0)
        A = sparse.vstack(rows_A).tocsc()
        b = np.concatenate(rows_b)
        return A, b, tilt_J, tilt_r, d0, dgrad

    def quadratic_model(self, z, tilt_J, tilt_r, d0, dgrad):
        """Gauss-Newton Hessian and gradient of the cost."""
        o = self.p.options
        N, nv, nz = self.N, self.nv, self.nz
        X, F, _ = self.split(z)
        Dm = sparse.diags([np.ones(N - 1), -np.ones(N - 1)], [1, 0], shape=(N - 1, N))
        Sx = sparse.lil_matrix((nv, nz))
        Sx[:, :nv] = sparse.eye(nv)
        Px = sparse.kron(sparse.eye(N), Sx.tocsr())  # picks the x block of every knot
        DX = sparse.kron(Dm, sparse.eye(nv)) @ Px
        H = 2 * o.w_motion * (DX.T @ DX)
        grad = 2 * o.w_motion * (DX.T @ (DX @ z))
        blocks = []
        gk = np.zeros((N, nz))
        for k in range(N):
            Hk = np.zeros((nz, nz))
            Jt = tilt_J[k]
            Hk[:nv, :nv] += 2 * o.w_tilt * Jt.T @ Jt
            gk[k, :nv] += 2 * o.w_tilt * Jt.T @ tilt_r[k]
            Hk[nv : nv + 6, nv : nv + 6] += 2 * o.w_f * np.eye(6)
            gk[k, nv : nv + 6] += 2 * o.w_f * F[k]
            r = self.p.margins[k] - d0[k]
            act = r > 0
            if np.any(act):
                Jd = -dgrad[k][:, act].T  # d r / d x
                Hk[:nv, :nv] += 2 * o.w_col * Jd.T @ Jd
                gk[k, :nv] += 2 * o.w_col * Jd.T @ r[act]
            Hk += 1e-8 * np.eye(nz)
            Hk[:nv, :nv] += 1e-6 * np.eye(nv)
            blocks.append(Hk)
        H = H + sparse.block_diag(blocks)
        return H.tocsc(), grad + gk.reshape(-1)

    def inequality_rows(self, z, radius):
        """G dz <= h: torque boxes, wrench polygon, joint limits and the trust region on x."""
        m = self.p.model
        N, nv, n, nz = self.N, self.nv, self.n, self.nz
        X, F, T = self.split(z)
        Gw, hw = self.p.wrench_G, self.p.wrench_h
        Gs, hs = [], []
        for k in range(N):
            off = k * nz
            eye_t = sparse.csr_matrix((np.ones(n), (np.arange(n), off + nv + 6 + np.arange(n))), shape=(n, N * nz))
            Gs += [eye_t, -eye_t]
            hs += [self.tmax - T[k], self.tmax + T[k]]
            Gk = sparse.lil_matrix((len(hw), N * nz))
            Gk[:, off + nv : off + nv + 6] = Gw
            Gs.append(Gk.tocsr())
            hs.append(hw - Gw @ F[k])
            eye_j = sparse.csr_matrix((np.ones(n), (np.arange(n), off + 6 + np.arange(n))), shape=(n, N * nz))
            Gs += [eye_j, -eye_j]
            hs += [m.upper - X[k, 6:], X[k, 6:] - m.lower]
            eye_x = sparse.csr_matrix((np.ones(nv), (np.arange(nv), off + np.arange(nv))), shape=(nv, N * nz))
            Gs += [eye_x, -eye_x]
            hs += [np.full(nv, radius), np.full(nv, radius)]
        h = np.concatenate(hs)
        # a slightly infeasible start is moved back to the bounds, never beyond them
        return sparse.vstack(Gs).tocsc(), h


def _solve_qp(P, c, A, b, G, h, mu):
    """Elastic QP: equalities A dz = b relaxed by l1-penalized slacks so the subproblem is always feasible."""
    nz, me = P.shape[0], A.shape[0]
    I = sparse.eye(me)
    P_ = sparse.block_diag([P, sparse.csc_matrix((2 * me, 2 * me))]).tocsc()
    c_ = np.concatenate([c, np.full(2 * me, mu)])
    A_ = sparse.hstack([A, I, -I])
    G_ = sparse.vstack([sparse.hstack([G, sparse.csc_matrix((G.shape[0], 2 * me))]),
                        sparse.hstack([sparse.csc_matrix((2 * me, nz)), -sparse.eye(2 * me)])])
    h_ = np.concatenate([h, np.zeros(2 * me)])
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.max_iter = 200
    settings.tol_gap_abs = settings.tol_gap_rel = 1e-9
    settings.tol_feas = 1e-9
    Aall = sparse.vstack([A_, G_]).tocsc()
    cones = [clarabel.ZeroConeT(me), clarabel.NonnegativeConeT(G_.shape[0])]
    solver = clarabel.DefaultSolver(sparse.triu(P_).tocsc(), c_, Aall, np.concatenate([b, h_]), cones, settings)
    sol = solver.solve()
    x = np.array(sol.x)
    slack = x[nz : nz + me] - x[nz + me :]
    return str(sol.status), x[:nz], slack, np.array(sol.z)[:me]


# ---------------------------------------------------------------------------
# initial guess


def _static_loads(prob, q):
    """Least-squares wrench and torques balancing gravity at ``q``."""
    m = prob.model
    ks = forward(m, q)
    zero = np.zeros(prob.nv)
    g = rnea(m, q, zero, zero, prob.gravity, ks)
    T_st, b_st = _frame_pose(m, ks, prob.stance.frame)
    Jc = point_jacobian(m, ks, b_st, T_st[:3, 3])
    B = np.hstack([Jc.T, np.vstack([np.zeros((6, m.n)), np.eye(m.n)])])
    sol = np.linalg.lstsq(B, g, rcond=None)[0]
    return sol[:6], sol[6:]


def boundary_configurations(prob):
    """Project the seeds onto stance + swing endpoint pins."""
    if prob.seed_start is None or prob.seed_goal is None:
        raise GeometryInvalid("problem needs seed configurations for the boundary knots")
    out = []
    for seed, pose in ((prob.seed_start, prob.swing_from), (prob.seed_goal, prob.swing_to)):
        pins = (prob.stance, Contact(prob.swing_frame, pose))
        try:
            out.append(project_to_manifold(prob.model, seed, pins, max_iters=300))
        except ProjectionFailed as exc:
            raise Infeasible(f"boundary pose unreachable: {exc}", {"reach": True}) from None
    return out


# Joint posture from an offline static study: stance leg folded under the
# base, swing leg stretched, tile limb counterweighting.  Used to seed the
# balanced boundary poses under gravity.
BALANCED_POSTURE = np.array([1.391, 1.799, -2.6, -1.114, 0.63, 0.031, -0.023, 1.524, -0.095,
                             -0.727, -1.28, 0.727, -0.617, 1.782, 0.0, 2.099, -0.803, -0.529])


def balanced_seed(model, stance):
    """BALANCED_POSTURE with the base placed so the stance TCP sits on its socket."""
    q = model.zero_configuration()
    if model.n == BALANCED_POSTURE.size:
        q.joints = np.clip(BALANCED_POSTURE, model.lower, model.upper)
    Tw = stance.pose @ np.linalg.inv(fk(model, q, stance.frame))
    q.base_pos = Tw[:3, 3].copy()
    q.base_quat = matrix_to_quat(Tw[:3, :3])
    return q


def _stance_limb(prob):
    return next(i for i in range(3) if prob.model.tcp_frame(i) == prob.stance.frame)


def static_pose(prob, seed, swing_pose, max_iters=100):
    """Statically balanced configuration with the swing TCP on ``swing_pose`` (a two-knot solve)."""
    sub = replace(prob, swing_from=swing_pose, swing_to=swing_pose, seed_start=seed, seed_goal=seed,
                  options=replace(prob.options, N=2, max_iters=max_iters))
    res = solve(sub, z0=initial_guess(sub, linear=True))
    return res.trajectory.config(0)


def _pivot_angle(prob):
    """Yaw about the stance socket's vertical axis taking swing_from onto swing_to, or None."""
    c = prob.stance.pose[:3, 3]
    a, b = prob.swing_from[:3, 3] - c, prob.swing_to[:3, 3] - c
    ang = math.atan2(b[1], b[0]) - math.atan2(a[1], a[0])
    Rz = rotz(ang)
    if np.linalg.norm(Rz @ a - b) > 1e-6 or np.linalg.norm(Rz @ prob.swing_from[:3, :3] - prob.swing_to[:3, :3]) > 1e-6:
        return None
    return ang


def static_phase_guess(prob):
    """Knots seeded from a balanced start pose.

    When the swing is a pivot about the stance socket, the whole robot is
    rotated rigidly about the socket's vertical axis while the stance foot
    yaw undoes the rotation, so every knot inherits the start's balance.
    Otherwise both ends are balanced separately and interpolated.
    """
    q0 = static_pose(prob, prob.seed_start, prob.swing_from)
    ang = _pivot_angle(prob)
    if ang is None:
        q1 = static_pose(prob, prob.seed_goal, prob.swing_to)
        x0, x1 = prob.chart.to_x(q0), prob.chart.to_x(q1)
        X = np.array([(1 - u) * x0 + u * x1 for u in np.linspace(0.0, 1.0, prob.N)])
    else:
        limb = _stance_limb(prob)
        X = np.array([prob.chart.to_x(pivot_configuration(prob.model, q0, limb, u * ang))
                      for u in np.linspace(0.0, 1.0, prob.N)])
    return _knots(prob, X)


def _knots(prob, X):
    Z = np.zeros((prob.N, prob.nz))
    for k in range(prob.N):
        q = prob.chart.to_q(X[k])
        f, tau = _static_loads(prob, q)
        Z[k, : prob.nv] = X[k]
        Z[k, prob.nv : prob.nv + 6] = f
        Z[k, prob.nv + 6 :] = tau
    return Z.reshape(-1)


def initial_guess(prob, path=None, linear=False):
    """Linear chart interpolation between the projected boundaries, or a resampled planner path."""
    N = prob.N
    if path is not None:
        xs = np.array([prob.chart.to_x(q) for q in path])
        s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(xs, axis=0), axis=1))])
        s = s / s[-1] if s[-1] > 0 else np.linspace(0, 1, len(xs))
        u = np.linspace(0.0, 1.0, N)
        X = np.array([np.interp(u, s, xs[:, j]) for j in range(xs.shape[1])]).T
    elif prob.gravity != 0.0 and not linear:
        return static_phase_guess(prob)
    else:
        q0, q1 = boundary_configurations(prob)
        x0, x1 = prob.chart.to_x(q0), prob.chart.to_x(q1)
        X = np.array([(1 - u) * x0 + u * x1 for u in np.linspace(0.0, 1.0, N)])
    return _knots(prob, X)


# ---------------------------------------------------------------------------
# solve


def _reach_check(prob):
    m = prob.model
    if m.template is None or m.params is None:
        return
    reach = stretched_reach(m.template, m.params) + m.base_spec.mount_radius
    for label, T in (("swing_from", prob.swing_from), ("swing_to", prob.swing_to)):
        d = float(np.linalg.norm(T[:3, 3] - prob.stance.pose[:3, 3]))
        if d > 2.0 * reach:
            raise Infeasible(f"{label} is {d:.3f} m from the stance socket, beyond twice the limb reach", {"reach": True})


def _bfgs_update(B, s, y):
    """Powell-damped BFGS update keeping ``B`` positive definite."""
    Bs = B @ s
    sBs = float(s @ Bs)
    if sBs <= 1e-14:
        return B
    sy = float(s @ y)
    if sy < 0.2 * sBs:
        th = 0.8 * sBs / (sBs - sy)
        y = th * y + (1.0 - th) * Bs
        sy = float(s @ y)
    return B + np.outer(y, y) / sy - np.outer(Bs, Bs) / sBs


def solve(prob, z0=None, path=None, opts=None, callback=None):
    """SQP solve.  Returns a TrajOptResult; raises NotConverged or Infeasible.

    Curvature of the constraints enters through one damped BFGS block per
    knot; the cost keeps its Gauss-Newton Hessian.
    """
    o = opts or prob.options
    t_start = time.monotonic()
    _reach_check(prob)
    tr = _Transcription(prob)
    z = np.array(z0, dtype=float) if z0 is not None else initial_guess(prob, path)
    N, nz = tr.N, tr.nz
    Bk = [1e-2 * np.eye(nz) for _ in range(N)]
    mu = 100.0
    radius = o.trust_radius
    phi, cons = tr.merit(z, mu)
    history = [phi]
    optimality = math.inf
    it = 0
    message = "iteration limit"
    converged = False
    stalled = 0
    lin = None
    prev = None  # (A, lam, step) of the last accepted iteration, for the BFGS update
    for it in range(1, o.max_iters + 1):
        if time.monotonic() - t_start > o.time_budget_s:
            message = "time budget exceeded"
            break
        if lin is None:
            lin = tr.linearize(z)
            A = lin[0]
            if prev is not None:
                A_old, lam_old, step_old = prev
                y_all = A.T @ lam_old - A_old.T @ lam_old
                for k in range(N):
                    blk = slice(k * nz, (k + 1) * nz)
                    Bk[k] = _bfgs_update(Bk[k], step_old[blk], y_all[blk])
        A, b, tJ, tr_r, d0, dgrad = lin
        P, c = tr.quadratic_model(z, tJ, tr_r, d0, dgrad)
        P = (P + sparse.block_diag(Bk)).tocsc()
        G, h = tr.inequality_rows(z, radius)
        status, dz, slack, lam = _solve_qp(P, c, A, b, G, h, mu)
        if "Solved" not in status:
            message = f"QP subproblem {status}"
            break
        phi, cons = tr.merit(z, mu)
        eqv = tr.eq_vector(cons)
        infeas = np.abs(eqv).sum() + tr.ineq_violation(z)
        if np.abs(slack).sum() > 0.5 * infeas + 1e-9 and mu < 1e8:
            # little predicted progress on feasibility: raise the penalty and re-solve
            mu *= 10.0
            phi, cons = tr.merit(z, mu)
            status, dz, slack, lam = _solve_qp(P, c, A, b, G, h, mu)
            if "Solved" not in status:
                message = f"QP subproblem {status}"
                break
        quad = float(c @ dz) + 0.5 * float(dz @ (P @ dz))
        pred = -quad + mu * (infeas - np.abs(slack).sum())
        optimality = abs(quad) / (1.0 + abs(tr.cost(z)))
        if optimality <= o.tol_opt and _violation(tr, cons, z) <= o.tol_feas:
            converged = True  # first-order stationary already; no step left to take
            message = "converged"
            break
        alpha = 1.0
        accepted = False
        while alpha > 1e-3:
            zn = z + alpha * dz
            phin, consn = tr.merit(zn, mu)
            if phin <= phi - 1e-4 * alpha * max(pred, 0.0):
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            radius *= 0.3
            stalled += 1
            if stalled > 8 or radius < 1e-7:
                message = "line search failed"
                break
            continue
        stalled = 0
        prev = (A, lam, alpha * dz)
        lin = None
        z, cons = zn, consn
        history.append(phin)
        radius = min(radius * 2.0, 1.0) if alpha == 1.0 else max(radius * 0.5, 1e-4)
        viol = _violation(tr, cons, z)
        if callback is not None:
            callback({"iteration": it, "merit": phin, "cost": tr.cost(z), "violation": viol, "alpha": alpha,
                      "radius": radius, "mu": mu, "optimality": optimality, "max_slack": float(np.abs(slack).max(initial=0.0))})
        step = float(np.max(np.abs(dz[np.concatenate([np.arange(s.start, s.stop) for s in tr.ix])]))) * alpha
        if viol <= o.tol_feas and (optimality <= o.tol_opt or step <= 1e-7):
            converged = True
            message = "converged"
            break
    viol = _violation(tr, cons, z)
    cost = tr.cost(z)
    stats = SolveStats(converged, it, viol, cost, optimality, message, history, time.monotonic() - t_start)
    result = _package(prob, tr, z, stats)
    if not converged:
        if viol > 1e-2 and message != "time budget exceeded":
            exc = Infeasible(f"trajectory optimization stuck infeasible ({message}, violation {viol:.3g})",
                             {"stats": stats.to_dict(), "families": _families(tr, cons, z)})
        else:
            exc = NotConverged(f"trajectory optimization did not converge ({message})", stats)
        exc.result = result  # last iterate, for diagnosis and load evaluation
        raise exc
    return result


def _violation(tr, cons, z):
    """Worst raw equality residual (N, N*m, m, rad) or inequality excess."""
    worst = 0.0
    for e, s, w in cons:
        worst = max(worst, float(np.max(np.abs(e))), float(np.max(np.abs(s))), float(np.max(np.abs(w), initial=0.0)))
    return max(worst, tr.ineq_violation(z))


def _families(tr, cons, z):
    """Worst violation per constraint family, relative to the family's own scale."""
    X, F, T = tr.split(z)
    m = tr.p.model
    # an equilibrium defect left over means the bounds on tau (joint rows) or on f (base rows) block balance
    E = np.array([e for e, _, _ in cons])
    torque = float(np.max(np.maximum(np.abs(T) - tr.tmax, 0.0) / tr.tmax))
    torque = max(torque, float(np.max(np.abs(E[:, 6:]) / tr.tmax)))
    wscale = float(np.min(tr.p.wrench_h))
    wrench = float(np.max(np.maximum(F @ tr.p.wrench_G.T - tr.p.wrench_h, 0.0)) / wscale)
    wrench = max(wrench, float(np.max(np.abs(E[:, :6]))) / wscale)
    kin = max(float(np.max(np.abs(s))) for _, s, _ in cons)
    kin = max([kin] + [float(np.max(np.abs(w))) for _, _, w in cons if np.size(w)])
    kin = max(kin, float(np.max(np.maximum(m.lower - X[:, 6:], 0.0))), float(np.max(np.maximum(X[:, 6:] - m.upper, 0.0))))
    return {"kinematic": kin, "torque": torque, "wrench": wrench}


def _package(prob, tr, z, stats):
    X, F, T = tr.split(z)
    qs = [prob.chart.to_q(x) for x in X]
    N = len(qs)
    t = np.arange(N) * prob.dt
    Q = np.array([q.vector() for q in qs])
    QD = np.zeros((N, prob.nv))
    for k in range(N - 1):
        QD[k] = difference(qs[k], qs[k + 1]) / prob.dt
    if N > 1:
        QD[-1] = 0.0
    traj = Trajectory(t, Q, QD, np.zeros((N, prob.nv)), T.copy(), F[:, None, :].copy())
    traj.qdd = finite_difference_qdd(traj)
    return TrajOptResult(traj, F.copy(), T.copy(), stats, z)


# ---------------------------------------------------------------------------
# analysis


def execution_trajectory(result, vel_limit=1.0, acc_limit=0.1, dt=0.05):
    """The knot sequence retimed rest-to-rest for load evaluation.

    The transcription is quasi-static, so its nominal knot spacing says
    nothing about inertial loads; executing it at bounded acceleration is
    what keeps the quasi-static torques meaningful.
    """
    return time_parameterize(result.trajectory.configs(), vel_limit, acc_limit, dt)


def total_variation(traj, joints):
    Q = traj.q[:, 7:]
    return np.abs(np.diff(Q[:, joints], axis=0)).sum(axis=0)


def pivot_signature(model, traj, limb=0):
    """Per-joint total variation of the stance limb and whether its distal yaw dominates."""
    idx = model.limb_joints[limb]
    tv = total_variation(traj, idx)
    names = [model.joint_names[i] for i in idx]
    distal = len(idx) - 1  # the most distal joint is the foot yaw in every template
    return dict(zip(names, map(float, tv))), bool(np.argmax(tv) == distal)


def wrench_verdicts(prob, result):
    return [check_wrench_limits(Wrench(f[:3], f[3:]), prob.stance.normal, prob.limits) for f in result.wrenches]
