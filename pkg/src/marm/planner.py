"""Sampling-based planning on the contact manifold.

Configurations are handled in a flat chart ``x = [base position, base
rotation vector (relative to a reference orientation), joints]``.  The tree
search steps linearly in the chart and projects every new state back onto
the manifold of pinned frames with damped least squares.
"""
from dataclasses import dataclass, field
import math
import time

import numpy as np

from .collision import CollisionChecker, socket_top_pose
from .dynamics import Contact
from .errors import InvalidEndpoints, NoConvergence, PlanningTimeout, ProjectionFailed, SamplingExhausted
from .kinematics import Configuration, IkOptions, difference, fk, ik_solve, pose_residuals, retract
from .spatial import matrix_to_rotvec, pose_error, quat_from_rotvec, quat_to_matrix, rotz
from .trajectory import Path, Trajectory

DENSE_STEP = math.radians(1.0)


def _targets(stance):
    return {c.frame: c.pose for c in stance}


def manifold_residual(model, q, stance):
    """Worst (position, rotation) error over the pinned frames."""
    if not stance:
        return 0.0, 0.0
    errs = [pose_error(fk(model, q, c.frame), c.pose) for c in stance]
    return max(float(np.linalg.norm(e[:3])) for e in errs), max(float(np.linalg.norm(e[3:])) for e in errs)


def project_to_manifold(model, q, stance, tol=(1e-4, 1e-3), max_iters=100):
    """Pull ``q`` onto the stance manifold with DLS IK seeded at ``q``."""
    if not stance:
        out = q.copy()
        np.clip(out.joints, model.lower, model.upper, out=out.joints)
        return out
    opts = IkOptions(tol_pos=tol[0], tol_rot=tol[1], max_iters=max_iters, stall_iters=15)
    try:
        return ik_solve(model, _targets(stance), q, opts)
    except NoConvergence as exc:
        raise ProjectionFailed(str(exc)) from None


# ---------------------------------------------------------------------------
# chart


class Chart:
    def __init__(self, R_ref):
        self.R_ref = np.asarray(R_ref, dtype=float)

    def to_x(self, q):
        return np.concatenate([q.base_pos, matrix_to_rotvec(q.R @ self.R_ref.T), q.joints])

    def to_q(self, x):
        quat = quat_from_rotvec(x[3:6])
        R = quat_to_matrix(quat) @ self.R_ref
        from .spatial import matrix_to_quat

        return Configuration(x[:3].copy(), matrix_to_quat(R), x[6:].copy())


def _dist(a, b):
    return float(np.max(np.abs(a - b)))


# ---------------------------------------------------------------------------
# problem


@dataclass
class PlanOptions:
    step: float = 0.1  # chart step (rad / m) before projection
    max_extensions: int = 4000
    shortcuts: int = 100
    time_budget_s: float = 120.0
    sample_margin: float = 0.6  # base sampling box grows this much around the endpoints (m)
    rot_sigma: float = 0.4  # base rotation spread of the samples (rad)


@dataclass
class PlanningProblem:
    model: object
    stance: tuple
    start: Configuration
    goal: Configuration
    world: object
    tol: tuple = (1e-4, 1e-3)
    seed: int = 0
    options: PlanOptions = field(default_factory=PlanOptions)
    exclude: tuple = ()  # collision pairs to ignore


class _Tree:
    def __init__(self, x, q):
        self.X = [x]
        self.Q = [q]
        self.parent = [-1]
        self._arr = x[None].copy()

    def add(self, x, q, parent):
        self.X.append(x)
        self.Q.append(q)
        self.parent.append(parent)
        self._arr = np.vstack([self._arr, x[None]])
        return len(self.X) - 1

    def nearest(self, x):
        return int(np.argmin(np.sum((self._arr - x) ** 2, axis=1)))

    def branch(self, i):
        out = []
        while i >= 0:
            out.append(i)
            i = self.parent[i]
        return out[::-1]


class _Planner:
    def __init__(self, problem):
        self.p = problem
        self.m = problem.model
        self.o = problem.options
        self.chart = Chart(problem.start.R)
        self.checker = CollisionChecker(self.m, problem.world, exclude=problem.exclude)
        self.rng = np.random.default_rng(problem.seed)
        self.t0 = time.monotonic()
        xs, xg = self.chart.to_x(problem.start), self.chart.to_x(problem.goal)
        lo = np.minimum(xs[:3], xg[:3]) - self.o.sample_margin
        hi = np.maximum(xs[:3], xg[:3]) + self.o.sample_margin
        self.box = (lo, hi)
        self.rot_mid = 0.5 * (xs[3:6] + xg[3:6])

    def check_time(self):
        if time.monotonic() - self.t0 > self.o.time_budget_s:
            raise PlanningTimeout(f"planning exceeded {self.o.time_budget_s} s")

    def sample(self):
        r = self.rng
        pos = r.uniform(*self.box)
        rot = self.rot_mid + r.normal(size=3) * self.o.rot_sigma
        joints = r.uniform(self.m.lower, self.m.upper)
        return np.concatenate([pos, rot, joints])

    def edge_free(self, qa, qb):
        d = difference(qa, qb)
        k = max(1, int(math.ceil(float(np.max(np.abs(d))) / DENSE_STEP)))
        qs = [retract(qa, d * (i / k)) for i in range(1, k + 1)]
        return bool(np.all(self.checker.collision_free(qs)))

    def steer(self, xa, qa, x_target, greedy):
        """Step from ``xa`` toward ``x_target``; yields (x, q) of each accepted state."""
        step = self.o.step
        x, q = xa, qa
        out = []
        while True:
            d = _dist(x, x_target)
            if d < 1e-9:
                return out, True
            x_try = x + (x_target - x) * min(1.0, step / d)
            try:
                q_new = project_to_manifold(self.m, self.chart.to_q(x_try), self.p.stance, self.p.tol)
            except ProjectionFailed:
                return out, False
            x_new = self.chart.to_x(q_new)
            d_new = _dist(x_new, x_target)
            if d_new >= d - 1e-9 or _dist(x_new, x) > 2.0 * step:
                return out, False
            if not self.edge_free(q, q_new):
                return out, False
            out.append((x_new, q_new))
            x, q = x_new, q_new
            if d_new < 1e-6:
                return out, True
            if not greedy:
                return out, False

    def grow(self, tree, x_target, greedy):
        i = tree.nearest(x_target)
        states, reached = self.steer(tree.X[i], tree.Q[i], x_target, greedy)
        last = i
        for x, q in states:
            last = tree.add(x, q, last)
        return last, reached, bool(states)

    def search(self):
        s, g = self.p.start, self.p.goal
        ta = _Tree(self.chart.to_x(s), s)
        tb = _Tree(self.chart.to_x(g), g)
        # direct connection first
        last, reached, _ = self.grow(ta, tb.X[0], True)
        if reached:
            return [ta.Q[k] for k in ta.branch(last)[:-1]] + [g]
        for it in range(self.o.max_extensions):
            self.check_time()
            x_rand = self.sample()
            new, _, grew = self.grow(ta, x_rand, False)
            if grew:
                other, reached, _ = self.grow(tb, ta.X[new], True)
                if reached:
                    pa = [ta.Q[k] for k in ta.branch(new)]
                    pb = [tb.Q[k] for k in tb.branch(other)][::-1]
                    path = pa + pb[1:]
                    if ta.Q[0] is not s:
                        path = path[::-1]
                    return path
            ta, tb = tb, ta
        raise PlanningTimeout(f"no connection after {self.o.max_extensions} extensions")

    def shortcut(self, path):
        xs = [self.chart.to_x(q) for q in path]
        for _ in range(self.o.shortcuts):
            if len(path) < 3:
                break
            i, j = sorted(self.rng.choice(len(path), size=2, replace=False))
            if j - i < 2:
                continue
            states, reached = self.steer(xs[i], path[i], xs[j], True)
            if not reached or len(states) >= j - i:
                continue
            # the last steered state coincides with waypoint j
            mid = states[:-1]
            path = path[: i + 1] + [q for _, q in mid] + path[j:]
            xs = xs[: i + 1] + [x for x, _ in mid] + xs[j:]
        return path


def plan(problem):
    """Bidirectional RRT on the stance manifold followed by shortcut smoothing."""
    m = problem.model
    checker = CollisionChecker(m, problem.world, exclude=problem.exclude)
    for label, q in (("start", problem.start), ("goal", problem.goal)):
        ep, er = manifold_residual(m, q, problem.stance)
        if ep > problem.tol[0] or er > problem.tol[1]:
            raise InvalidEndpoints(f"{label} is off the stance manifold ({ep:.2e} m, {er:.2e} rad)")
        if not checker.collision_free([q])[0]:
            raise InvalidEndpoints(f"{label} is in collision: {checker.report(q).colliding[:3]}")
        if not q.within_limits(m, 1e-9):
            raise InvalidEndpoints(f"{label} violates joint limits")
    if problem.start == problem.goal:
        return Path([problem.start.copy()], [manifold_residual(m, problem.start, problem.stance)])
    pl = _Planner(problem)
    path = pl.search()
    path = pl.shortcut(path)
    return Path(path, [manifold_residual(m, q, problem.stance) for q in path])


def validate_path(problem, path, tol=None, checker=None):
    """Exhaustive re-check: residuals, joint limits, dense collision. Returns a list of problems found."""
    m = problem.model
    tol = tol or problem.tol
    checker = checker or CollisionChecker(m, problem.world, exclude=problem.exclude)
    issues = []
    for k, q in enumerate(path.waypoints):
        ep, er = manifold_residual(m, q, problem.stance)
        if ep > tol[0] or er > tol[1]:
            issues.append(f"waypoint {k} residual {ep:.2e}/{er:.2e}")
        if not q.within_limits(m, 1e-9):
            issues.append(f"waypoint {k} outside joint limits")
    qs = [path.waypoints[0]]
    for qa, qb in zip(path.waypoints[:-1], path.waypoints[1:]):
        d = difference(qa, qb)
        if np.max(np.abs(d)) > 2.0 * problem.options.step + 1e-9:
            issues.append("waypoints farther apart than the step bound")
        k = max(1, int(math.ceil(float(np.max(np.abs(d))) / DENSE_STEP)))
        qs += [retract(qa, d * (i / k)) for i in range(1, k + 1)]
    free = checker.collision_free(qs)
    if not np.all(free):
        issues.append(f"{int(np.sum(~free))} dense samples in collision")
    return issues


# ---------------------------------------------------------------------------
# start / goal generation


def sample_stance_config(model, stance, world, rng, budget=1000, seed_q=None, sigma=0.3, checker=None, tol=(1e-4, 1e-3)):
    """Random joint sample, projection onto the stance, collision check; first success wins.

    With ``seed_q`` the samples are Gaussian perturbations of it (joints by
    ``sigma`` rad, base by a sixth of that); otherwise joints are uniform in
    their limits and the base starts at the origin.
    """
    checker = checker or CollisionChecker(model, world)
    for _ in range(budget):
        if seed_q is not None:
            q = seed_q.copy()
            q.joints = np.clip(q.joints + rng.normal(size=model.n) * sigma, model.lower, model.upper)
            dv = np.concatenate([rng.normal(size=3) * sigma / 6, rng.normal(size=3) * sigma / 6, np.zeros(model.n)])
            q = retract(q, dv)
        else:
            q = model.zero_configuration()
            q.joints = rng.uniform(model.lower, model.upper)
        try:
            q = project_to_manifold(model, q, stance, tol)
        except ProjectionFailed:
            continue
        if checker.collision_free([q])[0]:
            return q
    raise SamplingExhausted(f"no valid stance configuration in {budget} attempts")


# ---------------------------------------------------------------------------
# time parameterization


def _trapezoid(a, v):
    """Unit-distance rest-to-rest profile: (duration, accel time, peak speed)."""
    if v * v / a >= 1.0:
        ta = math.sqrt(1.0 / a)
        return 2.0 * ta, ta, a * ta
    ta = v / a
    return ta + 1.0 / v, ta, v


def _profile(u_t, T, ta, vp, a):
    """Position, speed, acceleration of a rest-to-rest trapezoid at time ``u_t``."""
    if u_t <= ta:
        return 0.5 * a * u_t * u_t, a * u_t, a
    if u_t >= T - ta:
        r = T - u_t
        return 1.0 - 0.5 * a * r * r, a * r, -a
    return 0.5 * a * ta * ta + vp * (u_t - ta), vp, 0.0


def time_parameterize(path, vel_limit=1.0, acc_limit=1.0, dt=0.02):
    """Rest-to-rest trapezoid on every segment, sampled on a uniform grid.

    Limits are per generalized-velocity coordinate (scalars broadcast).  The
    path stops at each waypoint, so ``qd`` is continuous and every sampled
    second difference stays within the acceleration limit.
    """
    qs = path.waypoints if isinstance(path, Path) else list(path)
    if not qs:
        raise ValueError("empty path")
    nv = 6 + len(qs[0].joints)
    vmax = np.broadcast_to(np.asarray(vel_limit, dtype=float), (nv,))
    amax = np.broadcast_to(np.asarray(acc_limit, dtype=float), (nv,))
    if len(qs) == 1:
        return Trajectory([0.0], qs[0].vector()[None], np.zeros((1, nv)), np.zeros((1, nv)))
    segs = []
    t_end = 0.0
    for qa, qb in zip(qs[:-1], qs[1:]):
        d = difference(qa, qb)
        nz = np.abs(d) > 1e-15
        if not np.any(nz):
            continue
        v = float(np.min(vmax[nz] / np.abs(d[nz])))
        a = float(np.min(amax[nz] / np.abs(d[nz])))
        T, ta, vp = _trapezoid(a, v)
        segs.append((t_end, T, ta, vp, a, qa, d))
        t_end += T
    if not segs:
        return Trajectory([0.0], qs[0].vector()[None], np.zeros((1, nv)), np.zeros((1, nv)))
    n_steps = max(1, int(math.ceil(t_end / dt - 1e-9)))
    h = t_end / n_steps
    t = np.arange(n_steps + 1) * h
    Q = np.zeros((len(t), 7 + nv - 6))
    QD = np.zeros((len(t), nv))
    QDD = np.zeros((len(t), nv))
    k = 0
    for i, ti in enumerate(t):
        while k < len(segs) - 1 and ti > segs[k][0] + segs[k][1]:
            k += 1
        t0, T, ta, vp, a, qa, d = segs[k]
        u, ud, udd = _profile(min(max(ti - t0, 0.0), T), T, ta, vp, a)
        Q[i] = retract(qa, d * u).vector()
        QD[i] = d * ud
        QDD[i] = d * udd
    return Trajectory(t, Q, QD, QDD)


# ---------------------------------------------------------------------------
# scenario geometry


def lattice_point(i, j, spacing=1.5):
    return np.array([spacing * (i + 0.5 * j), spacing * 0.5 * math.sqrt(3.0) * j, 0.05])


def _leg_angles(model, r, depth):
    """Knee-up planar solution putting the ankle pitch axis ``r`` out and ``depth`` below the hip pitch axis."""
    segs = model.template.segments(model.params)
    pit = [k for k, j in enumerate(model.template.module_sequence) if j.kind == "pitch"]
    a, b = sum(segs[pit[0] : pit[1]]), sum(segs[pit[1] : pit[2]])
    D = min(math.hypot(r, depth), 0.999 * (a + b))
    phi = math.atan2(r, depth)
    alpha = math.acos(np.clip((a * a + D * D - b * b) / (2 * a * D), -1.0, 1.0))
    beta = math.acos(np.clip((a * a + b * b - D * D) / (2 * a * b), -1.0, 1.0))
    hip = phi + alpha
    knee = -(math.pi - beta)
    return hip, knee, -(hip + knee)


def _aim_seed(model, base_xy, height, yaw, feet, raised=()):
    """Seed posture: every listed limb aims its hip yaw at its foot target and bends knee-up to reach it.

    ``raised`` limbs get an overhead posture (used to carry a tile).
    """
    from .kinematics import ankle_to_tcp, root_to_hip_pitch
    from .spatial import matrix_to_quat

    q = model.zero_configuration()
    q.base_pos = np.array([base_xy[0], base_xy[1], height])
    q.base_quat = matrix_to_quat(rotz(yaw))
    tm, pr = model.template, model.params
    for limb, target in feet.items():
        T_root = fk(model, q, model.root_frame(limb))
        ankle = np.asarray(target, dtype=float) + np.array([0.0, 0.0, ankle_to_tcp(tm, pr)])
        d = T_root[:3, :3].T @ (ankle - T_root[:3, 3])
        q.joints[model.joint_index(limb, "hip_yaw")] = math.atan2(d[1], d[0])
        hip, knee, ankle_p = _leg_angles(model, math.hypot(d[0], d[1]), d[2] - root_to_hip_pitch(tm, pr))
        q.joints[model.joint_index(limb, "hip_pitch")] = hip
        q.joints[model.joint_index(limb, "knee_pitch")] = knee
        q.joints[model.joint_index(limb, "ankle_pitch")] = ankle_p
    for limb in raised:
        q.joints[model.joint_index(limb, "hip_pitch")] = 2.0
        q.joints[model.joint_index(limb, "knee_pitch")] = 0.9
        q.joints[model.joint_index(limb, "ankle_pitch")] = 0.0
    return q


def _socket_pose_from(model, q, limb, center, lift=0.0):
    """Socket pose at ``center`` whose yaw matches the limb's TCP heading in ``q``."""
    T = fk(model, q, model.tcp_frame(limb))
    yaw = math.atan2(T[1, 0], T[0, 0])
    P = socket_top_pose(center, yaw)
    P[2, 3] += lift
    return P


@dataclass
class StanceScenario:
    """Concrete geometry of one relocation: stance pins and the moving limb's endpoints."""

    kind: str  # "double" | "single"
    stance: tuple  # Contacts held throughout
    moving_limb: int
    swing_from: np.ndarray  # 4x4 TCP poses (None: start only holds the stance)
    swing_to: np.ndarray
    seed_start: Configuration
    seed_goal: Configuration
    sockets: dict  # label -> centre
    payload_limb: int = None


def _rotate_about(q, center, angle):
    from .spatial import matrix_to_quat

    Rz = rotz(angle)
    out = q.copy()
    out.base_pos = np.asarray(center) + Rz @ (q.base_pos - np.asarray(center))
    out.base_quat = matrix_to_quat(Rz @ q.R)
    return out


def pivot_configuration(model, q, limb, angle):
    """Rotate the whole robot by ``angle`` about the vertical through the limb's TCP.

    The limb's most distal joint takes up the rotation so its TCP pose is
    unchanged; the sign is picked from whichever way the joint axis points.
    """
    frame = model.tcp_frame(limb)
    T0 = fk(model, q, frame)
    out = _rotate_about(q, T0[:3, 3], angle)
    j = model.limb_joints[limb][-1]
    best = None
    for sgn in (-1.0, 1.0):
        cand = out.copy()
        cand.joints[j] = q.joints[j] + sgn * angle
        err = np.linalg.norm(fk(model, cand, frame)[:3, :3] - T0[:3, :3])
        if best is None or err < best[0]:
            best = (err, cand)
    return best[1]


def double_stance_scenario(model, spacing=1.5, height=0.8, tile=False):
    """Feet on A and B; the free limb swings from a raised posture down onto C.

    C is the lattice socket ``spacing`` away from both stance sockets.  The
    start is not pinned: it is sampled on the two-foot manifold around a
    raised free-limb seed.  With ``tile`` the free limb carries the payload
    and the goal hovers the tile just above C.
    """
    A, B, C = lattice_point(0, 0, spacing), lattice_point(1, 0, spacing), lattice_point(0, 1, spacing)
    tops = {k: v + np.array([0, 0, 0.05]) for k, v in dict(A=A, B=B, C=C).items()}
    lift = 0.0
    if tile:
        payload = dict(model.payloads).get(model.tcp_frame(2))
        lift = (payload.thickness if payload is not None else 0.2) + 0.01
    g0 = (A + B + C) / 3.0
    yaw = math.radians(210.0)
    q0 = _aim_seed(model, g0[:2], height, yaw, {0: tops["A"], 1: tops["B"]}, raised=(2,))
    q1 = _aim_seed(model, g0[:2], height, yaw, {0: tops["A"], 1: tops["B"], 2: tops["C"] + np.array([0, 0, lift])})
    PA = _socket_pose_from(model, q0, 0, A)
    PB = _socket_pose_from(model, q0, 1, B)
    PC = _socket_pose_from(model, q1, 2, C, lift)
    stance = (Contact(model.tcp_frame(0), PA), Contact(model.tcp_frame(1), PB))
    return StanceScenario("double", stance, 2, None, PC, q0, q1, dict(A=A, B=B, C=C), 2 if tile else None)


def single_stance_scenario(model, spacing=1.5, height=0.8, angle=-math.pi / 3):
    """Stance foot on A; the swing foot pivots from B to B rotated by ``angle`` about A; limb 2 holds the tile overhead."""
    A, B = lattice_point(0, 0, spacing), lattice_point(1, 0, spacing)
    Bpp = A + rotz(angle) @ (B - A)
    C = lattice_point(0, 1, spacing)
    tops = {k: v + np.array([0, 0, 0.05]) for k, v in dict(A=A, B=B).items()}
    g0 = (A + B + C) / 3.0
    q0 = _aim_seed(model, g0[:2], height, math.radians(210.0), {0: tops["A"], 1: tops["B"]}, raised=(2,))
    q1 = pivot_configuration(model, q0, 0, angle)
    PA = _socket_pose_from(model, q0, 0, A)
    PB = _socket_pose_from(model, q0, 1, B)
    PBB = _socket_pose_from(model, q1, 1, Bpp)
    stance = (Contact(model.tcp_frame(0), PA),)
    return StanceScenario("single", stance, 1, PB, PBB, q0, q1, dict(A=A, B=B, Bpp=Bpp), 2)


def endpoint_configs(model, scen, world, rng, budget=1000):
    """Start and goal on the stance manifold with the moving TCP pinned at its endpoints."""
    checker = CollisionChecker(model, world)
    pin0 = scen.stance
    if scen.swing_from is not None:
        pin0 = pin0 + (Contact(model.tcp_frame(scen.moving_limb), scen.swing_from),)
    pin1 = scen.stance + (Contact(model.tcp_frame(scen.moving_limb), scen.swing_to),)
    start = sample_stance_config(model, pin0, world, rng, budget, seed_q=scen.seed_start, checker=checker)
    goal = sample_stance_config(model, pin1, world, rng, budget, seed_q=scen.seed_goal, checker=checker)
    return start, goal


def scenario_problem(model, scen, world, seed=0, options=None, budget=1000):
    rng = np.random.default_rng(seed)
    start, goal = endpoint_configs(model, scen, world, rng, budget)
    return PlanningProblem(model, scen.stance, start, goal, world, seed=seed, options=options or PlanOptions())
