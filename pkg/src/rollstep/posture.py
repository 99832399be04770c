"""Nominal crouch posture for the wheeled biped.

Solves the hip pitch so the whole-robot center of mass sits directly above
the wheel-contact line for a given knee bend (static balance on aligned
wheel contacts requires exactly that), and returns the base height that puts
the contact points at z = 0. Used by scenarios and as the
posture-regularization target.
"""

from __future__ import annotations

import numpy as np

from .dynamics import Kinematics, com_position
from .model import RobotModel, RobotState


def _balance_error(model: RobotModel, theta1: float, knee: float) -> float:
    q = np.zeros(model.nq)
    q[3] = 1.0
    joints = np.zeros(model.n_joints)
    for base_idx in (0, 5):  # left leg then right leg blocks
        joints[base_idx + 1] = theta1
        joints[base_idx + 2] = knee
    q[7:] = joints
    st = RobotState(q, np.zeros(model.nv))
    kin = Kinematics(model, st)
    com_x = com_position(model, kin)[0]
    wheel_x = kin.p_w[model.wheels[0].body][0]
    return float(com_x - wheel_x)


def nominal_posture(model: RobotModel, knee_bend: float = 0.6):
    """(joint angles, base height) for the statically balanced crouch."""
    lo, hi = -1.2, 0.3
    flo = _balance_error(model, lo, knee_bend)
    fhi = _balance_error(model, hi, knee_bend)
    if flo * fhi > 0.0:
        raise ValueError("could not bracket the hip pitch for this knee bend")
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        fm = _balance_error(model, mid, knee_bend)
        if flo * fm <= 0.0:
            hi, fhi = mid, fm
        else:
            lo, flo = mid, fm
    theta1 = 0.5 * (lo + hi)

    joints = np.zeros(model.n_joints)
    for base_idx in (0, 5):
        joints[base_idx + 1] = theta1
        joints[base_idx + 2] = knee_bend
    q = np.zeros(model.nq)
    q[3] = 1.0
    q[7:] = joints
    kin = Kinematics(model, RobotState(q, np.zeros(model.nv)))
    wheel_z = kin.p_w[model.wheels[0].body][2]
    base_height = model.wheels[0].radius - wheel_z
    return joints, float(base_height)
