"""Forward/inverse kinematics, Jacobians, manipulability and workspace bounds.

Generalized velocities are ``v = [v_base (3), w_base (3), qd (n)]`` where
``v_base`` is the world-frame velocity of the base origin and ``w_base`` the
world-frame angular velocity.  Jacobians map ``v`` to the world-frame
``[linear; angular]`` velocity of a frame origin.
"""
from dataclasses import dataclass, field
import math

import numpy as np
from scipy.optimize import minimize

from .errors import HeightExceedsReach, NoConvergence, UnknownFrame
from .spatial import matrix_to_rotvec, pose_error, quat_from_rotvec, quat_multiply, quat_to_matrix, rotvec_to_matrix, skew


@dataclass
class Configuration:
    base_pos: np.ndarray
    base_quat: np.ndarray
    joints: np.ndarray

    def __post_init__(self):
        self.base_pos = np.asarray(self.base_pos, dtype=float).reshape(3)
        self.base_quat = np.asarray(self.base_quat, dtype=float).reshape(4)
        self.joints = np.asarray(self.joints, dtype=float).reshape(-1)

    @property
    def R(self):
        return quat_to_matrix(self.base_quat)

    def vector(self):
        return np.concatenate([self.base_pos, self.base_quat, self.joints])

    @classmethod
    def from_vector(cls, vec):
        vec = np.asarray(vec, dtype=float)
        return cls(vec[:3], vec[3:7], vec[7:])

    def copy(self):
        return Configuration(self.base_pos.copy(), self.base_quat.copy(), self.joints.copy())

    def is_unit(self, tol=1e-9):
        return abs(np.linalg.norm(self.base_quat) - 1.0) <= tol

    def within_limits(self, model, tol=0.0):
        return bool(np.all(self.joints >= model.lower - tol) and np.all(self.joints <= model.upper + tol))

    def __eq__(self, other):
        if not isinstance(other, Configuration):
            return NotImplemented
        return (
            np.array_equal(self.base_pos, other.base_pos)
            and np.array_equal(self.base_quat, other.base_quat)
            and np.array_equal(self.joints, other.joints)
        )


def retract(q, dv):
    """Move configuration ``q`` along generalized velocity increment ``dv`` (world-frame base twist)."""
    dq = quat_from_rotvec(dv[3:6])
    quat = quat_multiply(dq, q.base_quat)
    quat /= np.linalg.norm(quat)
    return Configuration(q.base_pos + dv[:3], quat, q.joints + dv[6:])


def difference(q0, q1):
    """Generalized-velocity increment taking ``q0`` to ``q1`` (inverse of ``retract``)."""
    R = quat_to_matrix(q1.base_quat) @ quat_to_matrix(q0.base_quat).T
    return np.concatenate([q1.base_pos - q0.base_pos, matrix_to_rotvec(R), q1.joints - q0.joints])


# ---------------------------------------------------------------------------
# forward pass


@dataclass
class KinState:
    base_R: np.ndarray
    base_p: np.ndarray
    R: np.ndarray  # (n, 3, 3) joint-frame orientations
    p: np.ndarray  # (n, 3) joint origins
    axes: np.ndarray  # (n, 3) world joint axes


def forward_batch(model, base_R, base_p, joints):
    """Joint-frame poses for a batch: shapes (B,3,3), (B,3), (B,n) -> (B,n,3,3), (B,n,3)."""
    B, n = joints.shape
    PF, PA, PB = model.joint_basis
    c = np.cos(joints)[:, :, None, None]
    s = np.sin(joints)[:, :, None, None]
    Rloc = PF + c * PA + s * PB
    R = np.empty((B, n, 3, 3))
    p = np.empty((B, n, 3))
    for idx, par, pl in model.levels:
        if par is None:
            Rp = base_R[:, None]
            pp = base_p[:, None]
        else:
            Rp = R[:, par]
            pp = p[:, par]
        R[:, idx] = Rp @ Rloc[:, idx]
        p[:, idx] = pp + (Rp @ pl)[..., 0]
    return R, p


def joint_axes(model, R):
    """World joint axes from joint-frame orientations (..., n, 3, 3)."""
    return np.where(model.is_yaw[:, None], R[..., :, 2], R[..., :, 1])


def forward(model, q):
    bR = quat_to_matrix(q.base_quat)
    R, p = forward_batch(model, bR[None], q.base_pos[None], q.joints[None])
    R, p = R[0], p[0]
    return KinState(bR, q.base_pos, R, p, joint_axes(model, R))


def _frame_pose(model, ks, name):
    try:
        fr = model.frames[model.frame_index[name]]
    except KeyError:
        raise UnknownFrame(name) from None
    if fr.body < 0:
        Rb, pb = ks.base_R, ks.base_p
    else:
        Rb, pb = ks.R[fr.body], ks.p[fr.body]
    T = np.eye(4)
    T[:3, :3] = Rb @ np.array(fr.rotation).reshape(3, 3)
    T[:3, 3] = pb + Rb @ np.array(fr.position)
    return T, fr.body


def fk(model, q, frame, ks=None):
    """World pose (4x4) of ``frame`` at configuration ``q``."""
    ks = ks or forward(model, q)
    return _frame_pose(model, ks, frame)[0]


def point_jacobian(model, ks, body, point):
    """6 x nv Jacobian of a point rigidly attached to ``body`` (world frame)."""
    J = np.zeros((6, model.nv))
    J[0:3, 0:3] = np.eye(3)
    J[0:3, 3:6] = -skew(point - ks.base_p)
    J[3:6, 3:6] = np.eye(3)
    if body >= 0:
        chain = model.ancestors[body]
        ax = ks.axes[chain]
        J[0:3, 6:][:, chain] = np.cross(ax, point - ks.p[chain]).T
        J[3:6, 6:][:, chain] = ax.T
    return J


def jacobian(model, q, frame, ks=None):
    ks = ks or forward(model, q)
    T, body = _frame_pose(model, ks, frame)
    return point_jacobian(model, ks, body, T[:3, 3])


# ---------------------------------------------------------------------------
# inverse kinematics


@dataclass
class IkOptions:
    tol_pos: float = 1e-4
    tol_rot: float = 1e-3
    damping: float = 1e-2
    max_iters: int = 500
    max_step: float = 0.2
    free_base: bool = True
    joint_mask: np.ndarray = None  # restrict motion to these joints (bool, len n)
    stall_iters: int = 60  # give up when the residual has not improved for this many iterations


def ik_solve(model, targets, q_seed, opts=None):
    """Damped-least-squares IK for several frame targets at once.

    Returns the first iterate whose every target error is within tolerance.
    Joint limits are enforced by clamping.  Raises ``NoConvergence`` (with
    the residual history and the last iterate) after ``max_iters`` or when
    progress stalls.
    """
    opts = opts or IkOptions()
    names = list(targets)
    Ts = [np.asarray(targets[k], dtype=float) for k in names]
    cols = np.ones(model.nv, dtype=bool)
    if not opts.free_base:
        cols[:6] = False
    if opts.joint_mask is not None:
        cols[6:] &= np.asarray(opts.joint_mask, dtype=bool)
    q = q_seed.copy()
    lam2 = opts.damping**2
    history = []
    best = math.inf
    since_best = 0
    for it in range(opts.max_iters + 1):
        ks = forward(model, q)
        errs, Js = [], []
        ok = True
        for name, T in zip(names, Ts):
            cur, body = _frame_pose(model, ks, name)
            e = pose_error(cur, T)
            if np.linalg.norm(e[:3]) > opts.tol_pos or np.linalg.norm(e[3:]) > opts.tol_rot:
                ok = False
            errs.append(e)
            Js.append(point_jacobian(model, ks, body, cur[:3, 3]))
        e = np.concatenate(errs) if errs else np.zeros(0)
        res = float(np.linalg.norm(e))
        history.append(res)
        if ok:
            return q
        if it == opts.max_iters:
            break
        if res < best * (1 - 1e-6):
            best, since_best = res, 0
        else:
            since_best += 1
            if since_best >= opts.stall_iters:
                break
        J = np.vstack(Js)[:, cols]
        A = J @ J.T + lam2 * np.eye(J.shape[0])
        dx = J.T @ np.linalg.solve(A, e)
        step = float(np.max(np.abs(dx))) if dx.size else 0.0
        if step > opts.max_step:
            dx *= opts.max_step / step
        dv = np.zeros(model.nv)
        dv[cols] = dx
        q = retract(q, dv)
        np.clip(q.joints, model.lower, model.upper, out=q.joints)
    raise NoConvergence(f"IK did not converge (residual {history[-1]:.3g})", history, q)


def pose_residuals(model, q, targets):
    """Per-target (position error, rotation error) norms."""
    ks = forward(model, q)
    out = {}
    for name, T in targets.items():
        e = pose_error(fk(model, q, name, ks), T)
        out[name] = (float(np.linalg.norm(e[:3])), float(np.linalg.norm(e[3:])))
    return out


def closest_configuration(model, targets, q_seed, joint_mask):
    """Least-squares best effort for unreachable targets.

    Minimizes the squared pose error over the masked joints with BFGS from
    ``q_seed``.  At an interior minimizer the Jacobian has the residual as a
    left null vector, so this lands on the singular workspace boundary.
    """
    mask = np.asarray(joint_mask, dtype=bool)
    x0 = q_seed.joints[mask].copy()
    lo, hi = model.lower[mask], model.upper[mask]

    def cost(x):
        q = q_seed.copy()
        q.joints[mask] = x
        ks = forward(model, q)
        tot = 0.0
        for name, T in targets.items():
            e = pose_error(_frame_pose(model, ks, name)[0], T)
            tot += 0.5 * float(e @ e)
        return tot

    res = minimize(cost, x0, method="L-BFGS-B", bounds=list(zip(lo, hi)),
                   options={"ftol": 1e-15, "gtol": 1e-11, "maxiter": 5000, "maxfun": 50000})
    q = q_seed.copy()
    q.joints[mask] = res.x
    return q


# ---------------------------------------------------------------------------
# manipulability


def manipulability_index(J, columns=None):
    """Worst-case manipulability: smallest singular value of the selected block.

    ``columns`` picks the generalized-velocity columns of the limb under
    study (e.g. ``6 + model.limb_joints[i]``); ``None`` uses all columns.
    """
    J = np.asarray(J, dtype=float)
    if columns is not None:
        J = J[:, columns]
    s = np.linalg.svd(J, compute_uv=False)
    k = min(J.shape)
    if s.size < J.shape[0]:
        return 0.0
    return float(max(s[k - 1], 0.0))


def limb_mask(model, limb):
    m = np.zeros(model.n, dtype=bool)
    m[model.limb_joints[limb]] = True
    return m


def manipulability_profile(model, path, frame=None, limb=0, q_seed=None, best_effort=False, opts=None):
    """Index along a list of TCP poses for one limb with the base held fixed.

    Each pose is solved with ``ik_solve`` warm-started from the previous
    sample (path tracking).  With ``best_effort`` an unreachable pose is
    replaced by the least-squares closest configuration instead of raising.
    """
    frame = frame or model.tcp_frame(limb)
    mask = limb_mask(model, limb)
    opts = opts or IkOptions(tol_pos=1e-9, tol_rot=1e-8, max_iters=2000, free_base=False, stall_iters=200)
    opts.free_base = False
    opts.joint_mask = mask
    cols = 6 + np.flatnonzero(mask)
    q = (q_seed or home_configuration(model)).copy()
    out = np.empty(len(path))
    for k, T in enumerate(path):
        try:
            q = ik_solve(model, {frame: T}, q, opts)
        except NoConvergence as exc:
            if not best_effort:
                raise NoConvergence(f"path sample {k}: {exc}", exc.residuals, exc.q) from exc
            q = closest_configuration(model, {frame: T}, exc.q, mask)
        out[k] = manipulability_index(jacobian(model, q, frame), cols)
    return out


def home_configuration(model, hip=0.5, knee=-1.0):
    """Bent standing posture: hip and knee pitched, ankle pitch keeping the foot parallel to the root axis."""
    q = model.zero_configuration()
    for limb in range(model.n_limbs):
        q.joints[model.joint_index(limb, "hip_pitch")] = hip
        q.joints[model.joint_index(limb, "knee_pitch")] = knee
        q.joints[model.joint_index(limb, "ankle_pitch")] = -(hip + knee)
    return q


def nominal_path(template, params, samples=50, height_fraction=0.7, far_fraction=0.9):
    """Canonical straight TCP line used for manipulability comparisons.

    Expressed in the limb-root frame (z along the limb): the TCP keeps the
    root orientation (approach axis perpendicular to the ground) and moves at
    a fixed depth from the yaw axis (near boundary of an in-line ankle) out to
    ``far_fraction`` of the far boundary.
    """
    L = planar_length(template, params)
    h = height_fraction * L
    wb = workspace_bounds(template, params, h)
    x_end = far_fraction * wb.R_far
    depth = root_to_hip_pitch(template, params) + h + ankle_to_tcp(template, params)
    xs = np.linspace(0.0, x_end, samples)
    path = []
    for x in xs:
        T = np.eye(4)
        T[:3, 3] = (x, 0.0, depth)
        path.append(T)
    return path, xs


def limb_root_path_to_world(model, limb, path, q=None):
    q = q or model.zero_configuration()
    T_root = fk(model, q, model.root_frame(limb))
    return [T_root @ T for T in path]


# ---------------------------------------------------------------------------
# workspace


@dataclass
class WorkspaceBounds:
    D_min: float
    R_far: float
    base_height: float
    L_eff: float
    lateral_offset: float

    def far_radius(self, h):
        if abs(h) > self.L_eff:
            raise HeightExceedsReach(f"height {h} exceeds planar reach {self.L_eff}")
        return math.sqrt(self.L_eff**2 - h * h)


def _pitch_indices(template):
    return [k for k, j in enumerate(template.module_sequence) if j.kind == "pitch"]


def root_to_hip_pitch(template, params):
    segs = template.segments(params)
    first = _pitch_indices(template)[0]
    return float(sum(segs[:first]))


def planar_length(template, params):
    """Stretched length between the first and the last pitch axis."""
    segs = template.segments(params)
    pit = _pitch_indices(template)
    return float(sum(segs[pit[0] : pit[-1]]))


def ankle_to_tcp(template, params):
    segs = template.segments(params)
    return float(sum(segs[_pitch_indices(template)[-1] :]))


def workspace_bounds(template, params, base_height):
    """Near/far workspace radii in the vertical plane through the proximal yaw axis.

    ``base_height`` is the height of the hip pitch axis above the ankle pitch
    axis; with the TCP approach axis held perpendicular to the ground the
    ankle-to-TCP segment is vertical, so the far boundary is the right
    triangle ``R_far = sqrt(L_eff^2 - h^2)`` with ``L_eff`` the stretched
    hip-pitch to ankle-pitch length.  ``D_min`` is the distal pitch offset.
    """
    if base_height < 0:
        raise ValueError("base_height must be >= 0")
    L = planar_length(template, params)
    if base_height > L:
        raise HeightExceedsReach(f"height {base_height} exceeds planar reach {L}")
    d = template.ankle_offset if template.ankle_style == "offset" else 0.0
    return WorkspaceBounds(
        D_min=float(d),
        R_far=math.sqrt(L * L - base_height * base_height),
        base_height=float(base_height),
        L_eff=L,
        lateral_offset=float(d),
    )
