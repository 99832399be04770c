"""Floating-base rigid-body algorithms.

Composite-rigid-body mass matrix, recursive Newton-Euler for nonlinear
effects and inverse dynamics, world-frame point Jacobians with their drift
terms, centroidal momentum matrix, and wheel-contact geometry. All 6D
quantities are angular-before-linear; body twists live in body coordinates,
Jacobians map the generalized velocity to world-frame frame velocities.

Everything is a pure function of (model, state); a :class:`Kinematics`
cache can be shared across calls at the same state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import RobotModel, RobotState, Wheel
from .spatial import crf, crm, cross3, plucker, quat_to_rot, rot_axis, skew, spatial_inertia


class DegenerateContactError(RuntimeError):
    """Wheel axis parallel to the ground normal: no contact point exists."""


class Kinematics:
    """Per-state cache: transforms, world poses, twists, drift accelerations."""

    def __init__(self, model: RobotModel, state: RobotState):
        self.model = model
        self.state = state
        nb = len(model.bodies)
        self.R_w = np.zeros((nb, 3, 3))
        self.p_w = np.zeros((nb, 3))
        self.Xup = [None] * nb
        self.S = np.zeros((nb, 6))
        self.v = np.zeros((nb, 6))  # body-frame twists
        self.a_drift = np.zeros((nb, 6))  # body-frame accelerations for qdd = 0
        self.axis_world = np.zeros((max(model.n_joints, 1), 3))

        self.R_w[0] = state.base_rot
        self.p_w[0] = state.base_pos
        self.Xup[0] = plucker(self.R_w[0].T, state.base_pos)
        self.v[0] = state.qd[0:6]

        for b in range(1, nb):
            joint = model.joints[b - 1]
            p = joint.parent
            qj = state.joint_pos[b - 1]
            qdj = state.joint_vel[b - 1]
            R_rel = rot_axis(joint.axis, qj)
            self.R_w[b] = self.R_w[p] @ R_rel
            self.p_w[b] = self.p_w[p] + self.R_w[p] @ joint.origin
            self.Xup[b] = plucker(R_rel.T, joint.origin)
            self.S[b, :3] = joint.axis
            self.axis_world[b - 1] = self.R_w[b] @ joint.axis
            self.v[b] = self.Xup[b] @ self.v[p] + self.S[b] * qdj
            self.a_drift[b] = self.Xup[b] @ self.a_drift[p] + crm(self.v[b]) @ (self.S[b] * qdj)

    # -- world-frame point quantities -------------------------------------

    def point_world(self, body: int, point_local=(0.0, 0.0, 0.0)) -> np.ndarray:
        return self.p_w[body] + self.R_w[body] @ np.asarray(point_local, dtype=float)

    def point_velocity(self, body: int, point_local=(0.0, 0.0, 0.0)) -> np.ndarray:
        w, vo = self.v[body, :3], self.v[body, 3:]
        c = np.asarray(point_local, dtype=float)
        return self.R_w[body] @ (vo + cross3(w, c))

    def angular_velocity(self, body: int) -> np.ndarray:
        return self.R_w[body] @ self.v[body, :3]

    def point_drift_acceleration(self, body: int, point_local=(0.0, 0.0, 0.0)) -> np.ndarray:
        """Classical world acceleration of the point for qdd = 0 (the Jdot*qd term)."""
        w, vo = self.v[body, :3], self.v[body, 3:]
        al, ao = self.a_drift[body, :3], self.a_drift[body, 3:]
        c = np.asarray(point_local, dtype=float)
        v_pt = vo + cross3(w, c)
        a_spatial = ao + cross3(al, c)
        return self.R_w[body] @ (a_spatial + cross3(w, v_pt))

    def angular_drift(self, body: int) -> np.ndarray:
        return self.R_w[body] @ self.a_drift[body, :3]

    def link_com_jacobian(self, body: int):
        """Cached 6xnv world Jacobian at the body's center of mass."""
        cache = getattr(self, "_link_J", None)
        if cache is None:
            cache = self._link_J = {}
        if body not in cache:
            cache[body] = frame_jacobian(self.model, self, body, self.model.bodies[body].com)[0]
        return cache[body]

    def ancestors(self, body: int):
        """Body indices from `body` up to (excluding) the base."""
        chain = []
        b = body
        while b > 0:
            chain.append(b)
            b = self.model.parent_of(b)
        return chain


def _kin(model: RobotModel, state) -> Kinematics:
    return state if isinstance(state, Kinematics) else Kinematics(model, state)


# ---------------------------------------------------------------------------
# mass matrix / inverse dynamics


def mass_matrix(model: RobotModel, state) -> np.ndarray:
    """Joint-space inertia via the composite-rigid-body algorithm."""
    kin = _kin(model, state)
    nb = len(model.bodies)
    nv = model.nv
    Ic = [I.copy() for I in model.spatial_inertias()]
    for b in range(nb - 1, 0, -1):
        p = model.parent_of(b)
        X = kin.Xup[b]
        Ic[p] += X.T @ Ic[b] @ X
    M = np.zeros((nv, nv))
    M[0:6, 0:6] = Ic[0]
    for b in range(1, nb):
        F = Ic[b] @ kin.S[b]
        col = 5 + b
        M[col, col] = kin.S[b] @ F
        j = b
        while model.parent_of(j) != 0:
            F = kin.Xup[j].T @ F
            j = model.parent_of(j)
            M[5 + j, col] = kin.S[j] @ F
            M[col, 5 + j] = M[5 + j, col]
        F = kin.Xup[j].T @ F
        M[0:6, col] = F
        M[col, 0:6] = F
    return M


def rnea(model: RobotModel, state, qdd=None, gravity: bool = True) -> np.ndarray:
    """Inverse dynamics: generalized forces realizing qdd at the given state."""
    kin = _kin(model, state)
    nb = len(model.bodies)
    qdd = np.zeros(model.nv) if qdd is None else np.asarray(qdd, dtype=float)
    a = np.zeros((nb, 6))
    f = np.zeros((nb, 6))
    a_base = qdd[0:6].copy()
    if gravity:
        a_grav = np.concatenate([np.zeros(3), model.gravity_vector])
        a_base -= kin.Xup[0] @ a_grav
    a[0] = a_base
    inertias = model.spatial_inertias()
    f[0] = inertias[0] @ a[0] + crf(kin.v[0]) @ (inertias[0] @ kin.v[0])
    joint_vel = kin.state.joint_vel
    for b in range(1, nb):
        p = model.parent_of(b)
        qdj = joint_vel[b - 1]
        a[b] = kin.Xup[b] @ a[p] + kin.S[b] * qdd[5 + b] + crm(kin.v[b]) @ (kin.S[b] * qdj)
        f[b] = inertias[b] @ a[b] + crf(kin.v[b]) @ (inertias[b] @ kin.v[b])
    tau = np.zeros(model.nv)
    for b in range(nb - 1, 0, -1):
        tau[5 + b] = kin.S[b] @ f[b]
        f[model.parent_of(b)] += kin.Xup[b].T @ f[b]
    tau[0:6] = f[0]
    return tau


def nonlinear_effects(model: RobotModel, state) -> np.ndarray:
    """Coriolis, centrifugal and gravity terms (recursive Newton-Euler, qdd = 0)."""
    return rnea(model, state, None, gravity=True)


# ---------------------------------------------------------------------------
# Jacobians


def frame_jacobian(model: RobotModel, state, body, point_local=(0.0, 0.0, 0.0)):
    """World-frame 6xnv Jacobian (angular; linear) at a body-fixed point.

    Returns (J, drift) with frame velocity = J qd and frame acceleration
    = J qdd + drift. `body` may be a body name or index.
    """
    kin = _kin(model, state)
    if isinstance(body, str):
        body = model.body_index(body)
    p = kin.point_world(body, point_local)
    J = np.zeros((6, model.nv))
    R0 = kin.R_w[0]
    J[0:3, 0:3] = R0
    J[3:6, 0:3] = -skew(p - kin.p_w[0]) @ R0
    J[3:6, 3:6] = R0
    for b in kin.ancestors(body):
        a_w = kin.axis_world[b - 1]
        col = 5 + b
        J[0:3, col] = a_w
        J[3:6, col] = cross3(a_w, p - kin.p_w[b])
    drift = np.concatenate(
        [kin.angular_drift(body), kin.point_drift_acceleration(body, point_local)]
    )
    return J, drift


def frame_jacobian_at_world_point(model: RobotModel, state, body, p_world):
    """Same as :func:`frame_jacobian` for a world-space point rigidly attached."""
    kin = _kin(model, state)
    if isinstance(body, str):
        body = model.body_index(body)
    c_local = kin.R_w[body].T @ (np.asarray(p_world, dtype=float) - kin.p_w[body])
    return frame_jacobian(model, kin, body, c_local)


# ---------------------------------------------------------------------------
# center of mass and centroidal momentum


def com_position(model: RobotModel, state) -> np.ndarray:
    kin = _kin(model, state)
    acc = np.zeros(3)
    for i, b in enumerate(model.bodies):
        acc += b.mass * kin.point_world(i, b.com)
    return acc / model.total_mass


def com_velocity(model: RobotModel, state) -> np.ndarray:
    kin = _kin(model, state)
    acc = np.zeros(3)
    for i, b in enumerate(model.bodies):
        acc += b.mass * kin.point_velocity(i, b.com)
    return acc / model.total_mass


def com_jacobian(model: RobotModel, state):
    """(3xnv Jacobian, drift) of the whole-robot center of mass."""
    kin = _kin(model, state)
    J = np.zeros((3, model.nv))
    drift = np.zeros(3)
    for i, b in enumerate(model.bodies):
        J += b.mass * kin.link_com_jacobian(i)[3:6]
        drift += b.mass * kin.point_drift_acceleration(i, b.com)
    return J / model.total_mass, drift / model.total_mass


def centroidal_momentum_matrix(model: RobotModel, state) -> np.ndarray:
    """6xnv map from generalized velocity to spatial momentum about the CoM
    (angular rows first; linear rows equal total mass times the CoM Jacobian)."""
    kin = _kin(model, state)
    c = com_position(model, kin)
    A = np.zeros((6, model.nv))
    for i, b in enumerate(model.bodies):
        Ji = kin.link_com_jacobian(i)
        Jw, Jv = Ji[0:3], Ji[3:6]
        I_w = kin.R_w[i] @ b.inertia @ kin.R_w[i].T
        ci = kin.point_world(i, b.com)
        A[0:3] += I_w @ Jw + b.mass * skew(ci - c) @ Jv
        A[3:6] += b.mass * Jv
    return A


def centroidal_momentum_bias(model: RobotModel, state) -> np.ndarray:
    """d(A_G)/dt qd: rate of centroidal momentum at qdd = 0."""
    kin = _kin(model, state)
    c = com_position(model, kin)
    cdot = com_velocity(model, kin)
    bias = np.zeros(6)
    for i, b in enumerate(model.bodies):
        ci = kin.point_world(i, b.com)
        vi = kin.point_velocity(i, b.com)
        ai = kin.point_drift_acceleration(i, b.com)
        wi = kin.angular_velocity(i)
        alpha_i = kin.angular_drift(i)
        I_w = kin.R_w[i] @ b.inertia @ kin.R_w[i].T
        bias[0:3] += (
            I_w @ alpha_i
            + cross3(wi, I_w @ wi)
            + b.mass * cross3(vi - cdot, vi)
            + b.mass * cross3(ci - c, ai)
        )
        bias[3:6] += b.mass * ai
    return bias


# ---------------------------------------------------------------------------
# wheel contact geometry


@dataclass(frozen=True)
class ContactPointInfo:
    wheel: Wheel
    y_axis: np.ndarray  # wheel rolling axis, world frame
    heading: np.ndarray  # unit heading direction of the wheel
    r_wc: np.ndarray  # wheel center -> contact point
    position: np.ndarray  # contact point, world frame
    normal: np.ndarray  # ground normal used


def wheel_contact_geometry(
    model: RobotModel, state, wheel: Wheel, ground_normal=(0.0, 0.0, 1.0)
) -> ContactPointInfo:
    """Contact point of a wheel on the ground plane with the given normal.

    The heading is the normalized cross product of the rolling axis with the
    normal; the center-to-contact direction follows from crossing the axis
    with the heading. Raises when the axis is (near) parallel to the normal.
    """
    kin = _kin(model, state)
    z = np.asarray(ground_normal, dtype=float)
    z = z / np.linalg.norm(z)
    y_w = kin.R_w[wheel.body] @ model.joints[wheel.joint].axis
    h = cross3(y_w, z)
    nh = np.linalg.norm(h)
    if nh < 1e-8:
        raise DegenerateContactError("wheel axis is parallel to the ground normal")
    h = h / nh
    r_hat = cross3(y_w, h)
    r_hat = r_hat / np.linalg.norm(r_hat)
    r_wc = wheel.radius * r_hat
    center = kin.p_w[wheel.body]
    return ContactPointInfo(wheel, y_w, h, r_wc, center + r_wc, z)
