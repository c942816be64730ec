"""Parameterized three-limb robot models.

A limb is a serial chain of identical yaw/pitch actuator modules.  Two link
segments per limb are adjustable (``DesignParams.L1`` / ``L2``); everything
else comes from the template defaults below.  Models are immutable: every
helper that "changes" a model returns a new one.

Geometry conventions
--------------------
* Base frame: origin at the geometric centre of the base box, z up.
* Limb roots sit on the base bottom face on a circle of ``mount_radius``,
  120 degrees apart.  Each root frame has z pointing away from the base
  (down when the base is level) and x pointing radially outward.
* Every joint frame has the limb running along its local +z.  Yaw joints
  rotate about local z, pitch joints about local y.  A pitch joint with a
  non-zero ``offset_length`` shifts its output link sideways along the
  pitch axis, which is what lets an offset ankle fold flat.
"""
from dataclasses import dataclass, field, replace
from functools import cached_property
import math

import numpy as np

from .errors import ParamsBelowMinimum, TemplateInvalid, UnknownFrame
from .spatial import rotx, rotz

GRAVITY = 9.81

PROXIMAL_TORQUE_LIMIT = 200.0
DISTAL_TORQUE_LIMIT = 100.0


# ---------------------------------------------------------------------------
# collision primitives (body-frame)


@dataclass(frozen=True)
class Capsule:
    a: tuple
    b: tuple
    radius: float


@dataclass(frozen=True)
class Box:
    center: tuple
    half_extents: tuple
    rotation: tuple = (1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0)  # row-major 3x3

    @property
    def R(self):
        return np.array(self.rotation, dtype=float).reshape(3, 3)


# ---------------------------------------------------------------------------
# specs


@dataclass(frozen=True)
class JointSpec:
    name: str
    kind: str  # "yaw" | "pitch"
    offset_length: float = 0.0
    position_limits: tuple = (-math.pi, math.pi)
    velocity_limit: float = 2.0
    torque_limit: float = PROXIMAL_TORQUE_LIMIT
    actuator_mass: float = 4.0

    def __post_init__(self):
        if self.kind not in ("yaw", "pitch"):
            raise TemplateInvalid(f"joint {self.name}: kind must be yaw or pitch, got {self.kind!r}")
        lo, hi = self.position_limits
        if not lo < hi:
            raise TemplateInvalid(f"joint {self.name}: position limits must satisfy lower < upper")
        if self.torque_limit <= 0:
            raise TemplateInvalid(f"joint {self.name}: torque_limit must be positive")
        if self.offset_length < 0:
            raise TemplateInvalid(f"joint {self.name}: offset_length must be >= 0")
        if self.kind == "yaw" and self.offset_length != 0:
            raise TemplateInvalid(f"joint {self.name}: only pitch modules carry an offset")

    @property
    def axis(self):
        return (0.0, 0.0, 1.0) if self.kind == "yaw" else (0.0, 1.0, 0.0)


@dataclass(frozen=True)
class LimbTemplate:
    """Kinematic recipe for one limb.

    ``segment_lengths[k]`` is the axial length of link k, the body driven by
    joint k (from joint k to joint k+1, the last one ending at the TCP).
    ``adjustable_link_indices`` names the two segments replaced by L1, L2.
    """

    name: str
    module_sequence: tuple
    ankle_style: str
    dof_count: int
    adjustable_link_indices: tuple
    segment_lengths: tuple
    link_radii: tuple
    link_density: float = 4.0  # kg per metre of structure
    min_link_length: float = 0.15

    def __post_init__(self):
        n = len(self.module_sequence)
        if self.dof_count not in (6, 7):
            raise TemplateInvalid(f"dof_count must be 6 or 7, got {self.dof_count}")
        if self.dof_count != n:
            raise TemplateInvalid(f"dof_count {self.dof_count} != {n} modules")
        if len(self.segment_lengths) != n or len(self.link_radii) != n:
            raise TemplateInvalid("segment_lengths / link_radii must have one entry per module")
        if self.ankle_style not in ("offset", "inline"):
            raise TemplateInvalid(f"ankle_style must be offset or inline, got {self.ankle_style!r}")
        i1, i2 = self.adjustable_link_indices
        if not (0 <= i1 < n and 0 <= i2 < n and i1 < i2):
            raise TemplateInvalid("adjustable_link_indices out of range")
        names = [j.name for j in self.module_sequence]
        if len(set(names)) != n:
            raise TemplateInvalid("joint names must be unique")
        distal = self.distal_pitch_index
        if self.ankle_style == "inline" and self.module_sequence[distal].offset_length != 0:
            raise TemplateInvalid("inline ankle requires a zero-offset distal pitch module")
        if any(s < 0 for s in self.segment_lengths):
            raise TemplateInvalid("segment lengths must be non-negative")

    @property
    def distal_pitch_index(self):
        idx = [k for k, j in enumerate(self.module_sequence) if j.kind == "pitch"]
        return idx[-1]

    @property
    def ankle_offset(self):
        return self.module_sequence[self.distal_pitch_index].offset_length

    @property
    def joint_names(self):
        return tuple(j.name for j in self.module_sequence)

    def segments(self, params):
        seg = list(self.segment_lengths)
        i1, i2 = self.adjustable_link_indices
        seg[i1] = params.L1
        seg[i2] = params.L2
        return seg

    def fixed_length(self):
        i1, i2 = self.adjustable_link_indices
        return sum(s for k, s in enumerate(self.segment_lengths) if k not in (i1, i2))


@dataclass(frozen=True)
class DesignParams:
    L1: float
    L2: float

    def __post_init__(self):
        if not (self.L1 > 0 and self.L2 > 0):
            raise ParamsBelowMinimum(f"link lengths must be positive, got L1={self.L1}, L2={self.L2}")

    @property
    def total(self):
        return self.L1 + self.L2


@dataclass(frozen=True)
class LinkSpec:
    name: str
    length: float
    mass: float
    inertia: tuple  # 3x3 nested tuples, about the COM, link-frame axes
    com_offset: tuple
    collision: tuple = ()


@dataclass(frozen=True)
class Body:
    """A link together with the joint that drives it."""

    link: LinkSpec
    joint: JointSpec
    parent: int  # -1 for the base
    position: tuple  # joint origin in the parent frame
    rotation: tuple  # row-major 3x3, joint frame in the parent frame (q = 0)
    limb: int


@dataclass(frozen=True)
class BaseSpec:
    mass: float = 15.0
    half_extents: tuple = (0.3, 0.3, 0.075)
    mount_radius: float = 0.25
    n_limbs: int = 3


@dataclass(frozen=True)
class Frame:
    name: str
    body: int  # -1 for the base
    position: tuple
    rotation: tuple = (1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0)


@dataclass(frozen=True)
class Payload:
    """Rigid payload latched to a TCP (the default is the hexagonal tile)."""

    name: str = "tile"
    mass: float = 12.0
    across_flats: float = 1.2
    thickness: float = 0.2

    @property
    def half_extents(self):
        # box circumscribing the hexagonal prism
        circum = self.across_flats / math.sqrt(3.0)
        return (circum, 0.5 * self.across_flats, 0.5 * self.thickness)

    def inertia(self):
        a = self.across_flats / math.sqrt(3.0)  # hexagon side
        izz = 5.0 / 12.0 * self.mass * a * a
        ixx = 0.5 * izz + self.mass * self.thickness**2 / 12.0
        return np.diag([ixx, ixx, izz])


@dataclass(frozen=True)
class RobotModel:
    name: str
    base_link: LinkSpec
    bodies: tuple
    frames: tuple
    n_limbs: int
    template: LimbTemplate = None
    params: DesignParams = None
    base_spec: BaseSpec = None
    payloads: tuple = ()  # (frame name, Payload) pairs already folded into the bodies

    # -- sizes ---------------------------------------------------------------
    @property
    def n(self):
        return len(self.bodies)

    @property
    def nv(self):
        return 6 + self.n

    @property
    def nq(self):
        return 7 + self.n

    # -- cached numeric views -------------------------------------------------
    @cached_property
    def parent(self):
        return np.array([b.parent for b in self.bodies], dtype=int)

    @cached_property
    def place_p(self):
        return np.array([b.position for b in self.bodies], dtype=float).reshape(-1, 3)

    @cached_property
    def place_R(self):
        return np.array([b.rotation for b in self.bodies], dtype=float).reshape(-1, 3, 3)

    @cached_property
    def axis_local(self):
        return np.array([b.joint.axis for b in self.bodies], dtype=float).reshape(-1, 3)

    @cached_property
    def is_yaw(self):
        return np.array([b.joint.kind == "yaw" for b in self.bodies], dtype=bool)

    @cached_property
    def masses(self):
        return np.array([b.link.mass for b in self.bodies], dtype=float)

    @cached_property
    def coms(self):
        return np.array([b.link.com_offset for b in self.bodies], dtype=float).reshape(-1, 3)

    @cached_property
    def inertias(self):
        return np.array([b.link.inertia for b in self.bodies], dtype=float).reshape(-1, 3, 3)

    @cached_property
    def lower(self):
        return np.array([b.joint.position_limits[0] for b in self.bodies], dtype=float)

    @cached_property
    def upper(self):
        return np.array([b.joint.position_limits[1] for b in self.bodies], dtype=float)

    @cached_property
    def velocity_limits(self):
        return np.array([b.joint.velocity_limit for b in self.bodies], dtype=float)

    @cached_property
    def torque_limits(self):
        return np.array([b.joint.torque_limit for b in self.bodies], dtype=float)

    @cached_property
    def ancestors(self):
        """ancestors[i, j] is True when joint j lies on the chain from the base to body i."""
        n = self.n
        A = np.zeros((n, n), dtype=bool)
        for i in range(n):
            j = i
            while j >= 0:
                A[i, j] = True
                j = self.bodies[j].parent
        return A

    @cached_property
    def joint_basis(self):
        """(PF, PA, PB) with place_R @ Rjoint(t) = PF + cos(t) PA + sin(t) PB."""
        n = self.n
        F = np.zeros((n, 3, 3))
        A = np.zeros((n, 3, 3))
        B = np.zeros((n, 3, 3))
        for i, b in enumerate(self.bodies):
            if b.joint.kind == "yaw":
                F[i] = np.diag([0.0, 0.0, 1.0])
                A[i] = np.diag([1.0, 1.0, 0.0])
                B[i, 0, 1], B[i, 1, 0] = -1.0, 1.0
            else:
                F[i] = np.diag([0.0, 1.0, 0.0])
                A[i] = np.diag([1.0, 0.0, 1.0])
                B[i, 0, 2], B[i, 2, 0] = 1.0, -1.0
        P = self.place_R
        return P @ F, P @ A, P @ B

    @cached_property
    def levels(self):
        """Bodies grouped by chain depth: list of (indices, parent indices or None for the base)."""
        depth = []
        for b in self.bodies:
            depth.append(0 if b.parent < 0 else depth[b.parent] + 1)
        depth = np.array(depth, dtype=int)
        out = []
        for d in range(int(depth.max()) + 1 if len(depth) else 0):
            idx = np.flatnonzero(depth == d)
            out.append((idx, None if d == 0 else self.parent[idx], self.place_p[idx][:, :, None]))
        return out

    @cached_property
    def frame_index(self):
        return {f.name: k for k, f in enumerate(self.frames)}

    @cached_property
    def limb_joints(self):
        out = [[] for _ in range(self.n_limbs)]
        for i, b in enumerate(self.bodies):
            if b.limb >= 0:
                out[b.limb].append(i)
        return [np.array(x, dtype=int) for x in out]

    @cached_property
    def joint_names(self):
        return [f"limb{b.limb}_{b.joint.name}" if b.limb >= 0 else b.joint.name for b in self.bodies]

    def frame(self, name):
        try:
            return self.frames[self.frame_index[name]]
        except KeyError:
            raise UnknownFrame(name) from None

    def tcp_frame(self, limb):
        return f"limb{limb}_tcp"

    def root_frame(self, limb):
        return f"limb{limb}_root"

    def joint_index(self, limb, joint_name):
        for i, b in enumerate(self.bodies):
            if b.limb == limb and b.joint.name == joint_name:
                return i
        raise KeyError(f"limb{limb}_{joint_name}")

    def velocity_index(self, limb, joint_name):
        return 6 + self.joint_index(limb, joint_name)

    def zero_configuration(self):
        from .kinematics import Configuration

        return Configuration(np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(self.n))


# ---------------------------------------------------------------------------
# templates


def _joint(name, kind, proximal, offset=0.0):
    lim = (-math.pi, math.pi) if kind == "yaw" else (-2.7, 2.7)
    return JointSpec(
        name=name,
        kind=kind,
        offset_length=offset,
        position_limits=lim,
        velocity_limit=2.0,
        torque_limit=PROXIMAL_TORQUE_LIMIT if proximal else DISTAL_TORQUE_LIMIT,
        actuator_mass=4.0 if proximal else 2.5,
    )


# Fixed (non-adjustable) segment lengths and link radii.  These are declared
# assumptions standing in for actuator bulk, not measured values.
TEMPLATE_DEFAULTS = {
    "hip_offset": 0.15,  # hip yaw -> hip pitch
    "arm_yaw_offset": 0.10,  # hip pitch -> arm yaw (7-DoF only)
    "ankle_segment": 0.10,  # ankle yaw -> ankle pitch
    "foot_segment": 0.12,  # ankle pitch -> foot yaw
    "tcp_segment": 0.08,  # foot yaw -> TCP
    "ankle_offset": 0.10,  # lateral offset of the offset-style ankle pitch
    "proximal_radius": 0.06,
    "distal_radius": 0.045,
    "link_density": 4.0,
    "min_link_length": 0.15,
}


def make_template(dof=6, ankle="offset", **overrides):
    """Build one of the three studied limb templates.

    ``dof=6, ankle="offset"`` is the baseline breadboard limb
    (yaw-pitch-pitch-yaw-pitch-yaw); ``ankle="inline"`` removes the ankle
    pitch offset; ``dof=7`` adds a yaw joint right after the hip pitch.
    """
    d = dict(TEMPLATE_DEFAULTS)
    d.update(overrides)
    off = d["ankle_offset"] if ankle == "offset" else 0.0
    rp, rd = d["proximal_radius"], d["distal_radius"]
    mods = [_joint("hip_yaw", "yaw", True), _joint("hip_pitch", "pitch", True)]
    segs = [d["hip_offset"]]
    radii = [rp]
    if dof == 7:
        mods.append(_joint("arm_yaw", "yaw", True))
        segs.append(d["arm_yaw_offset"])
        radii.append(rp)
    elif dof != 6:
        raise TemplateInvalid(f"dof must be 6 or 7, got {dof}")
    mods += [
        _joint("knee_pitch", "pitch", True),
        _joint("ankle_yaw", "yaw", False),
        _joint("ankle_pitch", "pitch", False, offset=off),
        _joint("foot_yaw", "yaw", False),
    ]
    i1 = len(segs)
    segs += [0.0, 0.0, d["ankle_segment"], d["foot_segment"], d["tcp_segment"]]
    radii += [rp, rp, rd, rd, rd]
    return LimbTemplate(
        name=f"{dof}dof_{ankle}",
        module_sequence=tuple(mods),
        ankle_style=ankle,
        dof_count=dof,
        adjustable_link_indices=(i1, i1 + 1),
        segment_lengths=tuple(segs),
        link_radii=tuple(radii),
        link_density=d["link_density"],
        min_link_length=d["min_link_length"],
    )


def stretched_reach(template, params):
    """Axial length of the straight limb from its root to the TCP."""
    return float(sum(template.segments(params)))


# ---------------------------------------------------------------------------
# builder


def _cylinder_inertia(m, r, length):
    ia = 0.5 * m * r * r
    it = m * (3 * r * r + length * length) / 12.0
    return np.diag([it, it, ia])


def _tuple3x3(M):
    return tuple(tuple(float(x) for x in row) for row in np.asarray(M))


def _flat9(M):
    return tuple(float(x) for x in np.asarray(M, dtype=float).reshape(9))


def build_model(template, params, base=None, limb_mass=None, name=None):
    """Generate the floating-base robot for ``template`` with lengths ``params``.

    ``limb_mass`` rescales every link so each limb totals that mass (used to
    reproduce measured mass sets); by default masses follow from actuator
    masses plus the template's structural density.
    """
    base = base or BaseSpec()
    if not isinstance(template, LimbTemplate):
        raise TemplateInvalid("template must be a LimbTemplate")
    if template.dof_count != len(template.module_sequence):
        raise TemplateInvalid("dof_count / module_sequence mismatch")
    for label, val in (("L1", params.L1), ("L2", params.L2)):
        if val < template.min_link_length:
            raise ParamsBelowMinimum(f"{label}={val} below template minimum {template.min_link_length}")

    segs = template.segments(params)
    mods = template.module_sequence
    n = len(mods)

    links = []
    for k, (jm, seg, r) in enumerate(zip(mods, segs, template.link_radii)):
        m = jm.actuator_mass + template.link_density * seg
        off = jm.offset_length
        com = (0.0, off, 0.5 * seg)
        inertia = _cylinder_inertia(m, r, seg)
        if k == n - 1:
            # end cap of the foot capsule touches the TCP point
            b_end = max(seg - r, 0.0)
        else:
            b_end = seg
        caps = (Capsule((0.0, off, 0.0), (0.0, off, b_end), r),)
        links.append([jm, seg, m, inertia, com, caps])

    if limb_mass is not None:
        total = sum(l[2] for l in links)
        scale = limb_mass / total if total > 0 else 0.0
        for l in links:
            l[2] *= scale
            l[3] = l[3] * scale

    hx, hy, hz = base.half_extents
    bm = base.mass
    base_inertia = np.diag(
        [bm * (hy**2 + hz**2) / 3.0, bm * (hx**2 + hz**2) / 3.0, bm * (hx**2 + hy**2) / 3.0]
    )
    base_link = LinkSpec(
        name="base",
        length=0.0,
        mass=float(bm),
        inertia=_tuple3x3(base_inertia),
        com_offset=(0.0, 0.0, 0.0),
        collision=(Box((0.0, 0.0, 0.0), (hx, hy, hz)),),
    )

    bodies = []
    frames = [Frame("base", -1, (0.0, 0.0, 0.0))]
    for i in range(base.n_limbs):
        th = 2.0 * math.pi * i / base.n_limbs
        root_p = (base.mount_radius * math.cos(th), base.mount_radius * math.sin(th), -hz)
        root_R = rotz(th) @ rotx(math.pi)
        frames.append(Frame(f"limb{i}_root", -1, root_p, _flat9(root_R)))
        prev = -1
        for k, (jm, seg, m, inertia, com, caps) in enumerate(links):
            if k == 0:
                pos, rot = root_p, _flat9(root_R)
            else:
                pj = links[k - 1]
                pos = (0.0, pj[0].offset_length, pj[1])
                rot = _flat9(np.eye(3))
            link = LinkSpec(
                name=f"limb{i}_{jm.name}_link",
                length=float(seg),
                mass=float(m),
                inertia=_tuple3x3(inertia),
                com_offset=tuple(float(c) for c in com),
                collision=caps,
            )
            bodies.append(Body(link=link, joint=jm, parent=prev, position=tuple(map(float, pos)), rotation=rot, limb=i))
            frames.append(Frame(f"limb{i}_{jm.name}", len(bodies) - 1, (0.0, 0.0, 0.0)))
            prev = len(bodies) - 1
        last = links[-1]
        frames.append(Frame(f"limb{i}_tcp", prev, (0.0, last[0].offset_length, last[1])))

    return RobotModel(
        name=name or f"marm_{template.name}_{params.L1:.3f}_{params.L2:.3f}",
        base_link=base_link,
        bodies=tuple(bodies),
        frames=tuple(frames),
        n_limbs=base.n_limbs,
        template=template,
        params=params,
        base_spec=base,
    )


def total_mass(model):
    return float(model.base_link.mass + sum(b.link.mass for b in model.bodies))


def limb_masses(model):
    out = [0.0] * model.n_limbs
    for b in model.bodies:
        out[b.limb] += b.link.mass
    return out


# (base kg, per-limb kg): the breadboard design budget and the built prototype
MASS_SETS = {"breadboard": (15.0, 25.0), "prototype": (25.1, 23.1)}


def apply_mass_set(model, name):
    try:
        base, limb = MASS_SETS[name]
    except KeyError:
        raise ValueError(f"unknown mass set {name!r}; known: {sorted(MASS_SETS)}") from None
    return with_masses(model, base, limb)


def with_masses(model, base_mass, limb_mass):
    """Copy of ``model`` whose base and per-limb masses are rescaled to the given set."""
    bodies = []
    lm = limb_masses(model)
    for b in model.bodies:
        s = limb_mass / lm[b.limb] if lm[b.limb] > 0 else 0.0
        I = np.asarray(b.link.inertia) * s
        bodies.append(replace(b, link=replace(b.link, mass=b.link.mass * s, inertia=_tuple3x3(I))))
    sb = base_mass / model.base_link.mass if model.base_link.mass > 0 else 0.0
    base_link = replace(
        model.base_link,
        mass=float(base_mass),
        inertia=_tuple3x3(np.asarray(model.base_link.inertia) * sb),
    )
    return replace(model, base_link=base_link, bodies=tuple(bodies))


def attach_payload(model, frame_name, payload=None):
    """Rigidly attach ``payload`` to a TCP frame, centre-face grasp.

    The payload inertia is folded into the carrying link and its collision
    box is added to that link, so dynamics and collision checking see it
    without any extra bodies.
    """
    payload = payload or Payload()
    fr = model.frame(frame_name)
    if fr.body < 0:
        raise ValueError("payloads attach to limb frames only")
    body = model.bodies[fr.body]
    R_f = np.array(fr.rotation).reshape(3, 3)
    p_f = np.array(fr.position)
    center = p_f + R_f @ np.array([0.0, 0.0, payload.half_extents[2]])

    m1, c1 = body.link.mass, np.array(body.link.com_offset)
    I1 = np.array(body.link.inertia)
    m2 = payload.mass
    I2 = R_f @ payload.inertia() @ R_f.T
    m = m1 + m2
    c = (m1 * c1 + m2 * center) / m

    def shift(I, mass, d):
        return I + mass * ((d @ d) * np.eye(3) - np.outer(d, d))

    I = shift(I1, m1, c1 - c) + shift(I2, m2, center - c)
    box = Box(tuple(map(float, center)), tuple(map(float, payload.half_extents)), _flat9(R_f))
    link = replace(
        body.link,
        mass=float(m),
        com_offset=tuple(map(float, c)),
        inertia=_tuple3x3(I),
        collision=body.link.collision + (box,),
    )
    bodies = list(model.bodies)
    bodies[fr.body] = replace(body, link=link)
    frames = model.frames + (Frame(payload.name, fr.body, tuple(map(float, center)), fr.rotation),)
    return replace(
        model,
        bodies=tuple(bodies),
        frames=frames,
        payloads=model.payloads + ((frame_name, payload),),
    )


def validate_model(model):
    """Check the structural invariants; raises ``ValueError`` on the first failure."""
    names = [f.name for f in model.frames]
    if len(set(names)) != len(names):
        raise ValueError("frame names must be unique")
    for k, link in enumerate([model.base_link] + [b.link for b in model.bodies]):
        check_inertia(link.mass, link.inertia, f"links[{k}]")
    return True


def check_inertia(mass, inertia, where="link"):
    if mass < 0:
        raise ValueError(f"{where}: negative mass")
    I = np.asarray(inertia, dtype=float)
    if not np.allclose(I, I.T, atol=1e-12):
        raise ValueError(f"{where}: inertia not symmetric")
    ev = np.linalg.eigvalsh(I)
    if mass > 0 and ev.min() <= 0:
        raise ValueError(f"{where}: inertia not positive definite")
    if mass == 0 and ev.min() < -1e-12:
        raise ValueError(f"{where}: inertia not positive semidefinite")
    a, b, c = ev
    tol = 1e-12 * max(1.0, c)
    if a + b < c - tol:
        raise ValueError(f"{where}: principal moments violate the triangle inequality")
