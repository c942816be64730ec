"""Primitive distance queries and whole-robot collision checks.

Robot geometry is a set of capsules (links) and boxes (base, payloads);
the world is a ground plane plus boxes (sockets, stored tiles).  Distances
are signed only where cheap: capsule/box pairs report the segment-to-box
distance minus the radius, which goes negative on penetration.

Everything is vectorized over a batch of configurations so a whole planner
edge is checked in one call.
"""
from dataclasses import dataclass, field
import itertools
import math

import numpy as np

from .kinematics import forward_batch
from .model import Box, Capsule
from .spatial import quat_to_matrix

TOUCH_TOL = 5e-4  # pairs closer than -TOUCH_TOL count as colliding


# ---------------------------------------------------------------------------
# narrowphase (arrays of pairs, leading dims broadcast)


def segment_segment_distance(p1, q1, p2, q2):
    """Closest distance between segments [p1,q1] and [p2,q2] (clamped parameters)."""
    d1 = q1 - p1
    d2 = q2 - p2
    r = p1 - p2
    a = np.einsum("...i,...i->...", d1, d1)
    e = np.einsum("...i,...i->...", d2, d2)
    f = np.einsum("...i,...i->...", d2, r)
    c = np.einsum("...i,...i->...", d1, r)
    b = np.einsum("...i,...i->...", d1, d2)
    eps = 1e-14
    pa, pe = a > eps, e > eps
    sa = np.where(pa, a, 1.0)
    se = np.where(pe, e, 1.0)
    denom = a * e - b * b
    s = np.where(denom > eps * a * e, np.clip((b * f - c * e) / np.where(denom > 0, denom, 1.0), 0.0, 1.0), 0.0)
    t = (b * s + f) / se
    s = np.where(t < 0.0, np.clip(-c / sa, 0.0, 1.0), np.where(t > 1.0, np.clip((b - c) / sa, 0.0, 1.0), s))
    t = np.clip(t, 0.0, 1.0)
    # point-like segments
    s = np.where(pe, s, np.clip(-c / sa, 0.0, 1.0))
    t = np.where(pe, t, 0.0)
    s = np.where(pa, s, 0.0)
    t = np.where(pa, t, np.clip(f / se, 0.0, 1.0) * pe)
    c1 = p1 + s[..., None] * d1
    c2 = p2 + t[..., None] * d2
    return np.linalg.norm(c1 - c2, axis=-1)


def segment_box_distance(p, q, center, R, half):
    """Exact distance from segment [p,q] to a solid box (0 when they intersect).

    In the box frame the squared distance along the segment is piecewise
    quadratic with breakpoints where a coordinate crosses a slab face; each
    piece is minimized in closed form.
    """
    a = np.einsum("...ji,...j->...i", R, p - center)
    d = np.einsum("...ji,...j->...i", R, q - p)
    h = np.broadcast_to(half, a.shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        safe = np.where(np.abs(d) > 1e-15, d, np.inf)
        bp = np.concatenate([(h - a) / safe, (-h - a) / safe], axis=-1)
    bp = np.where(np.isfinite(bp), np.clip(bp, 0.0, 1.0), 0.0)
    ts = np.sort(np.concatenate([np.zeros(a.shape[:-1] + (1,)), bp, np.ones(a.shape[:-1] + (1,))], axis=-1), axis=-1)
    t0, t1 = ts[..., :-1], ts[..., 1:]  # (..., 7)
    tm = 0.5 * (t0 + t1)
    A3 = a[..., None, :]
    D3 = d[..., None, :]
    H3 = h[..., None, :]
    pm = A3 + tm[..., None] * D3
    above = pm > H3
    below = pm < -H3
    # excess e_i(t) = alpha + beta t on this piece
    alpha = np.where(above, A3 - H3, np.where(below, -(A3 + H3), 0.0))
    beta = np.where(above, D3, np.where(below, -D3, 0.0))
    qa = np.sum(beta * beta, axis=-1)
    qb = np.sum(alpha * beta, axis=-1)
    ts_opt = np.where(qa > 1e-18, -qb / np.where(qa > 1e-18, qa, 1.0), t0)
    ts_opt = np.clip(ts_opt, t0, t1)
    ex = alpha + ts_opt[..., None] * beta
    sq = np.sum(ex * ex, axis=-1)
    return np.sqrt(np.maximum(sq.min(axis=-1), 0.0))


def point_box_distance(x, center, R, half):
    a = np.einsum("...ji,...j->...i", R, x - center)
    ex = np.maximum(np.abs(a) - half, 0.0)
    return np.linalg.norm(ex, axis=-1)


def capsule_capsule_distance(a1, b1, r1, a2, b2, r2):
    return segment_segment_distance(a1, b1, a2, b2) - r1 - r2


def segment_box_penetration(p, q, center, R, half):
    """Smallest separating-axis overlap between a segment and a box (>= 0 when they intersect).

    Candidate axes are the three box axes and the segment direction crossed
    with each of them.
    """
    a = np.einsum("...ji,...j->...i", R, p - center)
    b = np.einsum("...ji,...j->...i", R, q - center)
    h = np.broadcast_to(half, a.shape)
    d = b - a
    eye = np.broadcast_to(np.eye(3), a.shape[:-1] + (3, 3))
    cr = np.cross(d[..., None, :], eye)
    nrm = np.linalg.norm(cr, axis=-1, keepdims=True)
    cr = np.where(nrm > 1e-9, cr / np.where(nrm > 1e-9, nrm, 1.0), 0.0)
    axes = np.concatenate([eye, cr], axis=-2)  # (..., 6, 3) in box coordinates
    w = np.sum(np.abs(axes) * h[..., None, :], axis=-1)
    pa = np.einsum("...ki,...i->...k", axes, a)
    pb = np.einsum("...ki,...i->...k", axes, b)
    over = np.minimum(np.maximum(pa, pb) + w, w - np.minimum(pa, pb))
    valid = np.any(axes != 0.0, axis=-1)
    return np.where(valid, over, np.inf).min(axis=-1)


def capsule_box_distance(a, b, r, center, R, half):
    """Signed distance; inside the box it is minus the separating-axis penetration depth."""
    d = segment_box_distance(a, b, center, R, half)
    inside = d <= 0.0
    if np.any(inside):
        d = np.where(inside, -np.maximum(segment_box_penetration(a, b, center, R, half), 0.0), d)
    return d - r


def capsule_plane_distance(a, b, r, normal, offset):
    da = np.einsum("...i,...i->...", a, normal) - offset
    db = np.einsum("...i,...i->...", b, normal) - offset
    return np.minimum(da, db) - r


_CORNERS = np.array(list(itertools.product((-1.0, 1.0), repeat=3)))
_EDGES = [(i, j) for i in range(8) for j in range(i + 1, 8) if np.sum(_CORNERS[i] != _CORNERS[j]) == 1]


def box_corners(center, R, half):
    local = _CORNERS * half[..., None, :]  # (..., 8, 3)
    return center[..., None, :] + np.einsum("...ij,...kj->...ki", R, local)


def box_plane_distance(center, R, half, normal, offset):
    c = box_corners(center, R, half)
    return (c @ np.asarray(normal, dtype=float) - offset).min(axis=-1)


def _sat_overlap(c1, R1, h1, c2, R2, h2):
    """Separating-axis test; returns the minimum overlap depth (<= 0 when separated)."""
    axes = [R1[..., :, k] for k in range(3)] + [R2[..., :, k] for k in range(3)]
    for i in range(3):
        for j in range(3):
            axes.append(np.cross(R1[..., :, i], R2[..., :, j]))
    d = c2 - c1
    depth = np.full(d.shape[:-1], np.inf)
    for ax in axes:
        nrm = np.linalg.norm(ax, axis=-1)
        ok = nrm > 1e-9
        u = ax / np.where(ok, nrm, 1.0)[..., None]
        ra = np.sum(np.abs(np.einsum("...ji,...j->...i", R1, u)) * h1, axis=-1)
        rb = np.sum(np.abs(np.einsum("...ji,...j->...i", R2, u)) * h2, axis=-1)
        ov = ra + rb - np.abs(np.einsum("...i,...i->...", d, u))
        depth = np.where(ok, np.minimum(depth, ov), depth)
    return depth


def box_box_distance(c1, R1, h1, c2, R2, h2):
    """Distance between two boxes; negative overlap depth when they intersect.

    For disjoint boxes the closest pair always involves an edge of one of
    them, so the minimum over the 24 edge-to-box distances is exact.
    """
    k1 = box_corners(c1, R1, h1)
    k2 = box_corners(c2, R2, h2)
    best = None
    for (ka, ca, Ra, ha), (cb, Rb, hb) in (((k1, c1, R1, h1), (c2, R2, h2)), ((k2, c2, R2, h2), (c1, R1, h1))):
        for i, j in _EDGES:
            dist = segment_box_distance(ka[..., i, :], ka[..., j, :], cb, Rb, hb)
            best = dist if best is None else np.minimum(best, dist)
    depth = _sat_overlap(c1, R1, h1, c2, R2, h2)
    return np.where(depth > 0, -depth, best)


# ---------------------------------------------------------------------------
# world


@dataclass
class World:
    ground_height: float = 0.0  # None disables the ground plane
    boxes: list = field(default_factory=list)  # Box primitives in world coordinates
    labels: list = field(default_factory=list)

    def add_box(self, box, label):
        self.boxes.append(box)
        self.labels.append(label)
        return self

    def box_arrays(self):
        if not self.boxes:
            return np.zeros((0, 3)), np.zeros((0, 3, 3)), np.zeros((0, 3))
        c = np.array([b.center for b in self.boxes], dtype=float)
        R = np.array([b.R for b in self.boxes])
        h = np.array([b.half_extents for b in self.boxes], dtype=float)
        return c, R, h


SOCKET_SIZE = 0.1


def socket_lattice(spacing=1.5, rings=2, origin=(0.0, 0.0)):
    """Socket centres of a triangular lattice (top faces at z = SOCKET_SIZE)."""
    pts = []
    a1 = np.array([spacing, 0.0])
    a2 = np.array([0.5 * spacing, 0.5 * math.sqrt(3.0) * spacing])
    for i in range(-rings, rings + 1):
        for j in range(-rings, rings + 1):
            if abs(i + j) <= rings:
                pts.append(np.asarray(origin) + i * a1 + j * a2)
    pts.sort(key=lambda p: (round(float(np.hypot(*p)), 9), round(float(math.atan2(p[1], p[0])), 9)))
    return [np.array([p[0], p[1], 0.5 * SOCKET_SIZE]) for p in pts]


def socket_world(centers, ground_height=0.0, extra_boxes=()):
    w = World(ground_height=ground_height)
    half = 0.5 * SOCKET_SIZE
    for k, c in enumerate(centers):
        w.add_box(Box(tuple(map(float, c)), (half, half, half)), f"socket{k}")
    for k, b in enumerate(extra_boxes):
        w.add_box(b, f"box{k}")
    return w


def socket_top_pose(center, yaw=0.0):
    """Latched TCP pose on a socket: on the top face, z pointing down into it."""
    T = np.eye(4)
    c, s = math.cos(yaw), math.sin(yaw)
    # Rz(yaw) @ Rx(pi)
    T[:3, :3] = np.array([[c, s, 0.0], [s, -c, 0.0], [0.0, 0.0, -1.0]])
    T[:3, 3] = (center[0], center[1], center[2] + 0.5 * SOCKET_SIZE)
    return T


# ---------------------------------------------------------------------------
# robot geometry and pair tables


@dataclass
class RobotGeometry:
    cap_body: np.ndarray
    cap_a: np.ndarray
    cap_b: np.ndarray
    cap_r: np.ndarray
    box_body: np.ndarray
    box_c: np.ndarray
    box_R: np.ndarray
    box_h: np.ndarray
    cap_names: list
    box_names: list
    cc_pairs: np.ndarray  # (P, 2) capsule-capsule
    cb_pairs: np.ndarray  # capsule (robot) - box (robot)
    bb_pairs: np.ndarray


def _adjacent(model, b1, b2):
    def par(b):
        return model.bodies[b].parent if b >= 0 else None

    return b1 == b2 or par(b1) == b2 or par(b2) == b1


def robot_geometry(model, exclude=()):
    """Collect primitives and the self-collision pair table.

    Pairs on the same or adjacent bodies are skipped, as is anything listed
    in ``exclude`` (pairs of primitive names).
    """
    caps, boxes = [], []
    prims = [(-1, model.base_link)] + [(i, b.link) for i, b in enumerate(model.bodies)]
    for body, link in prims:
        for k, g in enumerate(link.collision):
            name = f"{link.name}#{k}"
            if isinstance(g, Capsule):
                caps.append((body, g, name))
            else:
                boxes.append((body, g, name))
    excl = {frozenset(p) for p in exclude}

    def pairs(A, B, same):
        out = []
        for i, (bi, _, ni) in enumerate(A):
            for j, (bj, _, nj) in enumerate(B):
                if same and j <= i:
                    continue
                if _adjacent(model, bi, bj) or frozenset((ni, nj)) in excl:
                    continue
                out.append((i, j))
        return np.array(out, dtype=int).reshape(-1, 2)

    return RobotGeometry(
        cap_body=np.array([c[0] for c in caps], dtype=int),
        cap_a=np.array([c[1].a for c in caps], dtype=float).reshape(-1, 3),
        cap_b=np.array([c[1].b for c in caps], dtype=float).reshape(-1, 3),
        cap_r=np.array([c[1].radius for c in caps], dtype=float),
        box_body=np.array([b[0] for b in boxes], dtype=int),
        box_c=np.array([b[1].center for b in boxes], dtype=float).reshape(-1, 3),
        box_R=np.array([b[1].R for b in boxes]).reshape(-1, 3, 3),
        box_h=np.array([b[1].half_extents for b in boxes], dtype=float).reshape(-1, 3),
        cap_names=[c[2] for c in caps],
        box_names=[b[2] for b in boxes],
        cc_pairs=pairs(caps, caps, True),
        cb_pairs=pairs(caps, boxes, False),
        bb_pairs=pairs(boxes, boxes, True),
    )


@dataclass
class CollisionReport:
    colliding: list  # pair labels
    min_distance: float
    distances: dict  # label -> distance

    @property
    def ok(self):
        return not self.colliding


class CollisionChecker:
    """Pre-built pair tables for one model/world combination.

    Link capsules of one limb that already intersect at the zero
    configuration are joined through a short module and can never separate,
    so they are dropped from the self-collision table.  A bounding-sphere broadphase skips the exact
    distance for pairs farther apart than ``cutoff``; their reported distance
    is the sphere lower bound.
    """

    def __init__(self, model, world, exclude=(), tol=TOUCH_TOL, cutoff=0.1):
        self.model = model
        self.world = world
        self.tol = tol
        self.cutoff = cutoff
        g = self.geom = robot_geometry(model, exclude)
        self.wc, self.wR, self.wh = world.box_arrays()
        self.w_rho = np.linalg.norm(self.wh, axis=1)
        nc, nb, nw = len(g.cap_r), len(g.box_h), len(self.wh)
        self.groups = [("cc", *g.cc_pairs.T), ("cb", *g.cb_pairs.T), ("bb", *g.bb_pairs.T)]
        self._drop_permanent_contacts()
        if world.ground_height is not None:
            self.groups += [("cp", np.arange(nc), np.zeros(nc, int)), ("bp", np.arange(nb), np.zeros(nb, int))]
        ci, wj = np.meshgrid(np.arange(nc), np.arange(nw), indexing="ij")
        bi, wk = np.meshgrid(np.arange(nb), np.arange(nw), indexing="ij")
        self.groups += [("cw", ci.ravel(), wj.ravel()), ("bw", bi.ravel(), wk.ravel())]
        self.labels = [lab for grp in self.groups for lab in self._labels(grp)]

    def _labels(self, grp):
        kind, I, J = grp
        g = self.geom
        left = g.cap_names if kind[0] == "c" else g.box_names
        if kind[1] == "c":
            right = g.cap_names
        elif kind[1] == "b":
            right = g.box_names
        elif kind[1] == "p":
            right = ["ground"]
        else:
            right = self.world.labels
        return [f"{left[i]}|{right[j]}" for i, j in zip(I, J)]

    def _drop_permanent_contacts(self):
        q0 = self.model.zero_configuration()
        geo = self._world_geometry([q0])
        kind, I, J = self.groups[0]
        d = self._group_distance(self.groups[0], geo, np.inf)[0]
        limb = np.array([self.model.bodies[b].limb if b >= 0 else -1 for b in self.geom.cap_body])
        keep = (d >= -self.tol) | (limb[I] != limb[J])
        self.groups[0] = (kind, I[keep], J[keep])

    def _poses(self, qs):
        base_R = np.array([quat_to_matrix(q.base_quat) for q in qs])
        base_p = np.array([q.base_pos for q in qs])
        joints = np.array([q.joints for q in qs])
        R, p = forward_batch(self.model, base_R, base_p, joints)
        R = np.concatenate([R, base_R[:, None]], axis=1)  # body -1 -> last slot
        p = np.concatenate([p, base_p[:, None]], axis=1)
        return R, p

    def _world_geometry(self, qs):
        g = self.geom
        R, p = self._poses(qs)
        Rc, pc = R[:, g.cap_body], p[:, g.cap_body]
        ca = pc + np.einsum("bkij,kj->bki", Rc, g.cap_a)
        cb = pc + np.einsum("bkij,kj->bki", Rc, g.cap_b)
        Rb, pb = R[:, g.box_body], p[:, g.box_body]
        bc = pb + np.einsum("bkij,kj->bki", Rb, g.box_c)
        bR = Rb @ g.box_R[None]
        bh = np.broadcast_to(g.box_h, bc.shape)
        cap_sphere = (0.5 * (ca + cb), 0.5 * np.linalg.norm(cb - ca, axis=-1) + g.cap_r)
        box_sphere = (bc, np.broadcast_to(np.linalg.norm(g.box_h, axis=-1), bc.shape[:2]))
        return {"ca": ca, "cb": cb, "bc": bc, "bR": bR, "bh": bh, "cs": cap_sphere, "bs": box_sphere}

    def _group_distance(self, grp, geo, cutoff):
        kind, I, J = grp
        g = self.geom
        B = geo["ca"].shape[0]
        if len(I) == 0:
            return np.zeros((B, 0))
        if kind in ("cp", "bp"):
            nrm = np.array([0.0, 0.0, 1.0])
            h = self.world.ground_height
            if kind == "cp":
                return capsule_plane_distance(geo["ca"][:, I], geo["cb"][:, I], g.cap_r[I], nrm, h)
            return box_plane_distance(geo["bc"][:, I], geo["bR"][:, I], geo["bh"][:, I], nrm, h)
        # broadphase
        ls = geo["cs"] if kind[0] == "c" else geo["bs"]
        if kind[1] == "c":
            rc, rr = geo["cs"][0][:, J], geo["cs"][1][:, J]
        elif kind[1] == "b":
            rc, rr = geo["bs"][0][:, J], geo["bs"][1][:, J]
        else:
            rc, rr = np.broadcast_to(self.wc[J], (B, len(J), 3)), np.broadcast_to(self.w_rho[J], (B, len(J)))
        lb = np.linalg.norm(ls[0][:, I] - rc, axis=-1) - ls[1][:, I] - rr
        out = lb.copy()
        bi, pi = np.nonzero(lb < cutoff)
        if len(bi) == 0:
            return out
        i, j = I[pi], J[pi]
        if kind[0] == "c":
            A = (geo["ca"][bi, i], geo["cb"][bi, i], g.cap_r[i])
        else:
            A = (geo["bc"][bi, i], geo["bR"][bi, i], geo["bh"][bi, i])
        if kind[1] == "c":
            Bp = (geo["ca"][bi, j], geo["cb"][bi, j], g.cap_r[j])
        elif kind[1] == "b":
            Bp = (geo["bc"][bi, j], geo["bR"][bi, j], geo["bh"][bi, j])
        else:
            Bp = (self.wc[j], self.wR[j], self.wh[j])
        if kind == "cc":
            d = capsule_capsule_distance(*A, *Bp)
        elif kind[0] == "c":
            d = capsule_box_distance(*A, *Bp)
        else:
            d = box_box_distance(*A, *Bp)
        out[bi, pi] = d
        return out

    def distances(self, qs, cutoff=None):
        """Signed distances for every pair: array (B, n_pairs) ordered like ``labels``."""
        cutoff = self.cutoff if cutoff is None else cutoff
        geo = self._world_geometry(qs)
        parts = [self._group_distance(grp, geo, cutoff) for grp in self.groups]
        return np.concatenate(parts, axis=1) if parts else np.zeros((len(qs), 0))

    def collision_free(self, qs):
        """Per-configuration verdict for a batch."""
        return self.distances(qs).min(axis=1, initial=np.inf) >= -self.tol

    def report(self, q):
        d = self.distances([q], cutoff=np.inf)[0]
        bad = np.flatnonzero(d < -self.tol)
        return CollisionReport(
            [self.labels[k] for k in bad],
            float(d.min(initial=np.inf)),
            dict(zip(self.labels, map(float, d))),
        )


def check_collision(model, q, world, exclude=()):
    return CollisionChecker(model, world, exclude).report(q)
