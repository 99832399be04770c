"""Spatial (6D) vector algebra and rotation utilities.

Conventions, used everywhere in this package:
  * 6D vectors are angular-before-linear, expressed in body coordinates at
    the body-frame origin.
  * quaternions are wxyz, unit norm, mapping body to world.
"""

from __future__ import annotations

import numpy as np


def skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def cross3(a, b) -> np.ndarray:
    """Cross product of two 3-vectors (much cheaper than np.cross here)."""
    return np.array(
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    )


def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if n < 1e-12:
        raise ValueError("degenerate quaternion")
    q = q / n
    return -q if q[0] < 0.0 else q


def quat_to_rot(q) -> np.ndarray:
    w, x, y, z = quat_normalize(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_mul(q1, q2) -> np.ndarray:
    w1, x1, y1, z1 = q1
    w2, x2, y2, z2 = q2
    return np.array(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ]
    )


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    n = np.linalg.norm(axis)
    if n < 1e-12:
        return np.array([1.0, 0.0, 0.0, 0.0])
    half = 0.5 * angle
    return np.concatenate([[np.cos(half)], np.sin(half) * axis / n])


def quat_integrate(q, omega_body, dt: float) -> np.ndarray:
    """Advance a body-to-world quaternion by a body-frame angular velocity."""
    w = np.asarray(omega_body, dtype=float)
    th = np.linalg.norm(w) * dt
    if th < 1e-12:
        dq = np.array([1.0, 0.5 * w[0] * dt, 0.5 * w[1] * dt, 0.5 * w[2] * dt])
    else:
        dq = quat_from_axis_angle(w, th)
    return quat_normalize(quat_mul(q, dq))


def rot_axis(axis, angle: float) -> np.ndarray:
    """Active rotation matrix about a unit axis (Rodrigues)."""
    a = np.asarray(axis, dtype=float)
    K = skew(a)
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def rot_log(R) -> np.ndarray:
    """Rotation-vector logarithm of a rotation matrix."""
    R = np.asarray(R, dtype=float)
    cos_th = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    th = np.arccos(cos_th)
    if th < 1e-9:
        return 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if np.pi - th < 1e-6:
        # near pi: extract axis from the symmetric part
        A = (R + np.eye(3)) / 2.0
        axis = np.sqrt(np.maximum(np.diag(A), 0.0))
        # fix signs using off-diagonals
        if A[0, 1] < 0:
            axis[1] = -axis[1]
        if A[0, 2] < 0:
            axis[2] = -axis[2]
        n = np.linalg.norm(axis)
        return th * axis / (n if n > 1e-12 else 1.0)
    return th / (2.0 * np.sin(th)) * np.array(
        [R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]]
    )


def rpy_from_rot(R) -> np.ndarray:
    """Roll-pitch-yaw (x-y-z intrinsic) angles of a body-to-world rotation."""
    R = np.asarray(R, dtype=float)
    pitch = np.arctan2(-R[2, 0], np.hypot(R[2, 1], R[2, 2]))
    roll = np.arctan2(R[2, 1], R[2, 2])
    yaw = np.arctan2(R[1, 0], R[0, 0])
    return np.array([roll, pitch, yaw])


# ---------------------------------------------------------------------------
# 6D operators


def plucker(E, r) -> np.ndarray:
    """Motion-vector transform from frame A to frame B.

    E maps A-coordinates to B-coordinates; r is the origin of B expressed in
    A coordinates. Force vectors transform with the inverse transpose.
    """
    X = np.zeros((6, 6))
    X[:3, :3] = E
    X[3:, 3:] = E
    x, y, z = r
    X[3:, 0] = -(E[:, 1] * z - E[:, 2] * y)
    X[3:, 1] = -(E[:, 2] * x - E[:, 0] * z)
    X[3:, 2] = -(E[:, 0] * y - E[:, 1] * x)
    return X


def crm(v) -> np.ndarray:
    """Motion cross-product operator (v x)."""
    wx, wy, wz, ux, uy, uz = v
    return np.array(
        [
            [0.0, -wz, wy, 0.0, 0.0, 0.0],
            [wz, 0.0, -wx, 0.0, 0.0, 0.0],
            [-wy, wx, 0.0, 0.0, 0.0, 0.0],
            [0.0, -uz, uy, 0.0, -wz, wy],
            [uz, 0.0, -ux, wz, 0.0, -wx],
            [-uy, ux, 0.0, -wy, wx, 0.0],
        ]
    )


def crf(v) -> np.ndarray:
    """Force cross-product operator (v x*)."""
    return -crm(v).T


def spatial_inertia(mass: float, com, inertia_com) -> np.ndarray:
    """6x6 spatial inertia about the body-frame origin.

    ``com`` is the center of mass in body coordinates; ``inertia_com`` the
    3x3 rotational inertia about the center of mass, body axes.
    """
    C = skew(com)
    I = np.zeros((6, 6))
    I[:3, :3] = np.asarray(inertia_com, dtype=float) + mass * C @ C.T
    I[:3, 3:] = mass * C
    I[3:, :3] = mass * C.T
    I[3:, 3:] = mass * np.eye(3)
    return I
