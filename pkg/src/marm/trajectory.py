"""Waypoint paths and time-stamped trajectories, with CSV/manifest output."""
from dataclasses import dataclass, field
import csv
import json

import numpy as np

from .kinematics import Configuration, difference


@dataclass
class Path:
    waypoints: list
    residuals: list = field(default_factory=list)  # per-waypoint (pos, rot) manifold error

    def __len__(self):
        return len(self.waypoints)

    def as_array(self):
        return np.array([q.vector() for q in self.waypoints])

    def __eq__(self, other):
        if not isinstance(other, Path) or len(self) != len(other):
            return False
        return all(a == b for a, b in zip(self.waypoints, other.waypoints))


@dataclass
class Trajectory:
    """Knots ``t[k]`` with configuration vectors ``q[k]`` (nq) and velocities/accelerations (nv)."""

    t: np.ndarray
    q: np.ndarray
    qd: np.ndarray
    qdd: np.ndarray
    tau: np.ndarray = None  # (N, n)
    wrenches: np.ndarray = None  # (N, k, 6)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float).reshape(-1)
        self.q = np.atleast_2d(np.asarray(self.q, dtype=float))
        self.qd = np.atleast_2d(np.asarray(self.qd, dtype=float))
        self.qdd = np.atleast_2d(np.asarray(self.qdd, dtype=float))
        if np.any(np.diff(self.t) <= 0):
            raise ValueError("timestamps must be strictly increasing")

    def __len__(self):
        return len(self.t)

    @property
    def duration(self):
        return float(self.t[-1] - self.t[0]) if len(self.t) else 0.0

    def config(self, k):
        return Configuration.from_vector(self.q[k])

    def configs(self):
        return [self.config(k) for k in range(len(self))]

    @classmethod
    def static(cls, q, duration=1.0, knots=5):
        t = np.linspace(0.0, duration, knots)
        nv = len(q.joints) + 6
        return cls(t, np.tile(q.vector(), (knots, 1)), np.zeros((knots, nv)), np.zeros((knots, nv)))


def finite_difference_qdd(traj, smooth=False):
    """Second derivative of the reference positions: central inside, one-sided at the ends."""
    N = len(traj)
    qs = traj.configs()
    nv = traj.qd.shape[1]
    if N < 3:
        return np.zeros((N, nv))
    # velocities on the intervals, then differentiate again
    dt = np.diff(traj.t)
    vel = np.array([difference(qs[k], qs[k + 1]) / dt[k] for k in range(N - 1)])
    acc = np.zeros((N, nv))
    for k in range(1, N - 1):
        acc[k] = (vel[k] - vel[k - 1]) / (0.5 * (dt[k] + dt[k - 1]))
    acc[0] = acc[1]
    acc[-1] = acc[-2]
    if smooth:
        pad = np.vstack([acc[:1], acc, acc[-1:]])
        acc = (pad[:-2] + pad[1:-1] + pad[2:]) / 3.0
    return acc


def write_trajectory_csv(traj, path, joint_names=None):
    nq = traj.q.shape[1]
    names = ["bx", "by", "bz", "qw", "qx", "qy", "qz"]
    names += list(joint_names) if joint_names is not None else [f"q{i}" for i in range(nq - 7)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + names)
        for t, q in zip(traj.t, traj.q):
            w.writerow([repr(float(t))] + [repr(float(x)) for x in q])


def read_trajectory_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    data = np.array([[float(x) for x in r] for r in rows[1:]])
    t, q = data[:, 0], data[:, 1:]
    N, nv = len(t), q.shape[1] - 1
    qd = np.zeros((N, nv))
    if N > 1:
        qs = [Configuration.from_vector(x) for x in q]
        for k in range(N - 1):
            qd[k] = difference(qs[k], qs[k + 1]) / (t[k + 1] - t[k])
        qd[-1] = 0.0
    traj = Trajectory(t, q, qd, np.zeros((N, nv)))
    traj.qdd = finite_difference_qdd(traj)
    return traj


def write_manifest(path, **entries):
    with open(path, "w") as fh:
        json.dump(entries, fh, indent=2, sort_keys=True)
        fh.write("\n")
