"""Independent reference implementations used only by the tests.

They read the raw body table of a model and share no code with the library
beyond the quaternion-to-matrix helper.
"""
import numpy as np

from marm.spatial import quat_to_matrix


def _joint_rot(kind, th):
    c, s = np.cos(th), np.sin(th)
    if kind == "yaw":
        return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])
    return np.array([[c, 0, s], [0, 1.0, 0], [-s, 0, c]])


def _hom(R, p):
    T = np.eye(4)
    T[:3, :3] = R
    T[:3, 3] = p
    return T


def chain_fk(model, q, frame):
    """World pose of a frame by plain 4x4 composition along its chain."""
    fr = next(f for f in model.frames if f.name == frame)
    T_frame = _hom(np.array(fr.rotation).reshape(3, 3), fr.position)
    T_base = _hom(quat_to_matrix(q.base_quat), q.base_pos)
    chain = []
    b = fr.body
    while b >= 0:
        chain.append(b)
        b = model.bodies[b].parent
    T = T_base
    for b in reversed(chain):
        body = model.bodies[b]
        T = T @ _hom(np.array(body.rotation).reshape(3, 3), body.position) @ _hom(_joint_rot(body.joint.kind, q.joints[b]), np.zeros(3))
    return T @ T_frame


# ---------------------------------------------------------------------------
# spatial-vector RNEA (body coordinates, [angular; linear] ordering)


def _sk(v):
    return np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])


def _xform(E, r):
    """Plucker motion transform to a frame rotated by E (A->B coords) and displaced by r (in A)."""
    X = np.zeros((6, 6))
    X[:3, :3] = E
    X[3:, 3:] = E
    X[3:, :3] = -E @ _sk(r)
    return X


def _crm(v):
    X = np.zeros((6, 6))
    X[:3, :3] = _sk(v[:3])
    X[3:, 3:] = _sk(v[:3])
    X[3:, :3] = _sk(v[3:])
    return X


def _crf(v):
    return -_crm(v).T


def _inertia(m, c, Ic):
    C = _sk(c)
    I = np.zeros((6, 6))
    I[:3, :3] = Ic + m * C @ C.T
    I[:3, 3:] = m * C
    I[3:, :3] = m * C.T
    I[3:, 3:] = m * np.eye(3)
    return I


def spatial_rnea(model, q, v, a, gravity):
    """Generalized forces in the library's convention, computed in body coordinates."""
    Rb = quat_to_matrix(q.base_quat)
    wb, vb = Rb.T @ v[3:6], Rb.T @ v[0:3]
    Vb = np.concatenate([wb, vb])
    alb = Rb.T @ a[3:6]
    acc_o = Rb.T @ (a[0:3] + np.array([0, 0, gravity]))
    Ab = np.concatenate([alb, acc_o - np.cross(wb, vb)])
    bl = model.base_link
    Ib = _inertia(bl.mass, np.array(bl.com_offset), np.array(bl.inertia))
    fb = Ib @ Ab + _crf(Vb) @ Ib @ Vb

    n = model.n
    V, A, F, X, S = [None] * n, [None] * n, [None] * n, [None] * n, [None] * n
    for i, body in enumerate(model.bodies):
        Rp = np.array(body.rotation).reshape(3, 3) @ _joint_rot(body.joint.kind, q.joints[i])
        X[i] = _xform(Rp.T, np.array(body.position))
        S[i] = np.concatenate([body.joint.axis, np.zeros(3)])
        Vp, Ap = (Vb, Ab) if body.parent < 0 else (V[body.parent], A[body.parent])
        V[i] = X[i] @ Vp + S[i] * v[6 + i]
        A[i] = X[i] @ Ap + S[i] * a[6 + i] + _crm(V[i]) @ S[i] * v[6 + i]
        I = _inertia(body.link.mass, np.array(body.link.com_offset), np.array(body.link.inertia))
        F[i] = I @ A[i] + _crf(V[i]) @ I @ V[i]
    tau = np.zeros(n)
    for i in reversed(range(n)):
        tau[i] = S[i] @ F[i]
        p = model.bodies[i].parent
        if p < 0:
            fb = fb + X[i].T @ F[i]
        else:
            F[p] = F[p] + X[i].T @ F[i]
    return np.concatenate([Rb @ fb[3:], Rb @ fb[:3], tau])


def point_jacobian_fd(model, q, frame, eps=1e-6):
    """Central-difference Jacobian of a frame pose w.r.t. the generalized velocity."""
    from marm.kinematics import retract
    from marm.spatial import matrix_to_rotvec

    J = np.zeros((6, model.nv))
    for k in range(model.nv):
        dv = np.zeros(model.nv)
        dv[k] = eps
        Tp = chain_fk(model, retract(q, dv), frame)
        Tm = chain_fk(model, retract(q, -dv), frame)
        J[:3, k] = (Tp[:3, 3] - Tm[:3, 3]) / (2 * eps)
        J[3:, k] = matrix_to_rotvec(Tp[:3, :3] @ Tm[:3, :3].T) / (2 * eps)
    return J
