"""Configuration-space integration shared by the simulator and test oracles."""

from __future__ import annotations

import numpy as np

from .model import RobotModel, RobotState
from .spatial import quat_integrate, quat_to_rot


def integrate_state(model: RobotModel, state: RobotState, qd_new, dt: float) -> RobotState:
    """Advance positions by the (new) generalized velocity over dt.

    Semi-implicit convention: callers update the velocity first, then call
    this with it. Base linear velocity is body-frame; the quaternion is
    advanced by the exponential map and renormalized.
    """
    qd_new = np.asarray(qd_new, dtype=float)
    q = state.q.copy()
    R = quat_to_rot(q[3:7])
    q[0:3] += R @ qd_new[3:6] * dt
    q[3:7] = quat_integrate(q[3:7], qd_new[0:3], dt)
    q[7:] += qd_new[6:] * dt
    return RobotState(q, qd_new, state.t + dt)


def step_semi_implicit(model: RobotModel, state: RobotState, qdd, dt: float) -> RobotState:
    """Velocity-first step with midpoint position update.

    The velocity advances explicitly; positions advance with the average of
    old and new velocity, which integrates constant-acceleration motion
    (free fall) exactly and keeps energy drift second order.
    """
    qdd = np.asarray(qdd, dtype=float)
    qd_new = state.qd + qdd * dt
    qd_mid = 0.5 * (state.qd + qd_new)
    q = state.q.copy()
    R = quat_to_rot(q[3:7])
    q[0:3] += R @ qd_mid[3:6] * dt
    q[3:7] = quat_integrate(q[3:7], qd_mid[0:3], dt)
    q[7:] += qd_mid[6:] * dt
    return RobotState(q, qd_new, state.t + dt)
