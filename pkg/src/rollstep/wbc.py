"""Whole-body controller: prioritized task assembly and torque extraction.

Decision vector xi = [qdd; contact forces]. Priority 0 carries physics and
limits (floating-base dynamics, rolling/stance contact rows, friction
pyramid, unilateral margin, torque bounds), priority 1 the Cartesian
tracking tasks (centroidal + wheel centers), priority 2 regularization
(posture, swing-wheel minimum torque, force/acceleration damping, base
orientation). Solved by the strict nullspace cascade in :mod:`numerics`.

Rolling-constraint rows are written at the wheel center: the center
Jacobian plus a rank-one coupling of the wheel-spin acceleration through
the center-to-contact vector, which avoids parametrizing the wheel's
orientation. The velocity-product right-hand side treats that vector
geometrically by default ("geometric"); the "material" variant differentiates
the rim material point instead, which adds a centripetal pull of the wheel
center toward the ground (v^2/r) and is kept only for comparison -- it
demands tensile contact forces beyond v = sqrt(g r).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .dynamics import (
    ContactPointInfo,
    Kinematics,
    _kin,
    centroidal_momentum_bias,
    centroidal_momentum_matrix,
    com_position,
    com_velocity,
    frame_jacobian,
    frame_jacobian_at_world_point,
    mass_matrix,
    nonlinear_effects,
    wheel_contact_geometry,
)
from .model import RobotModel, Wheel
from .numerics import HierarchyResult, PrioritizedTask, solve_hierarchy
from .spatial import cross3, rot_log, skew

ROLLING, STANCE, SWING = "rolling", "stance", "swing"


@dataclass
class ContactSpec:
    """One load-bearing wheel: rolling (pure-roll rows) or stance (point pin)."""

    wheel: Wheel
    mode: str  # ROLLING | STANCE
    anchor: np.ndarray | None = None  # stance contact point, world frame
    normal: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))


@dataclass
class TrackingGains:
    K_P: np.ndarray
    K_D: np.ndarray

    def __post_init__(self):
        self.K_P = np.atleast_1d(np.asarray(self.K_P, dtype=float))
        self.K_D = np.atleast_1d(np.asarray(self.K_D, dtype=float))
        if np.any(self.K_P < 0.0) or np.any(self.K_D < 0.0):
            raise ValueError("gains must be non-negative")


def tracking_acceleration(X_star, Xd_star, Xdd_star, X, Xd, gains: TrackingGains):
    """Commanded acceleration: Kp E(X*, X) + Kd (Xd* - Xd) + Xdd*.

    Position targets are 3-vectors. Pose targets are (position, rotation)
    pairs; the orientation error is the rotation logarithm of R* R^T and the
    result stacks [angular; linear] commands.
    """
    if isinstance(X_star, tuple):
        p_star, R_star = X_star
        p, R = X
        err = np.concatenate([rot_log(np.asarray(R_star) @ np.asarray(R).T), np.asarray(p_star) - np.asarray(p)])
    else:
        err = np.asarray(X_star, dtype=float) - np.asarray(X, dtype=float)
    vel_err = np.asarray(Xd_star, dtype=float) - np.asarray(Xd, dtype=float)
    return gains.K_P * err + gains.K_D * vel_err + np.asarray(Xdd_star, dtype=float)


@dataclass
class WbcConfig:
    mu: float = 0.7
    f_z_min: float = 1.0
    velocity_product: str = "geometric"  # or "material"
    com_gains: TrackingGains = field(
        default_factory=lambda: TrackingGains([60.0, 60.0, 120.0], [15.0, 15.0, 22.0])
    )
    swing_gains: TrackingGains = field(
        default_factory=lambda: TrackingGains([180.0, 180.0, 180.0], [27.0, 27.0, 27.0])
    )
    wheel_x_gains: TrackingGains = field(default_factory=lambda: TrackingGains([400.0], [40.0]))
    posture_kp: float = 60.0
    posture_kd: float = 8.0
    base_orient_kp: float = 90.0
    base_orient_kd: float = 18.0
    momentum_damping: float = 6.0
    w_com: object = 10.0  # scalar or per-axis (x, y, z)
    w_momentum: float = 1.0
    w_base_orient: float = 4.0
    w_swing: float = 5.0
    w_wheel_x: float = 5.0
    w_posture: float = 1.0
    w_min_wheel_tau: float = 1.0
    w_force_reg: float = 0.02
    w_qdd_reg: float = 0.02


@dataclass
class WbcRefs:
    """Per-tick tracking targets, world frame."""

    com_pos: np.ndarray
    com_vel: np.ndarray
    com_acc: np.ndarray
    posture: np.ndarray  # joint-angle regularization target
    swing: dict = field(default_factory=dict)  # wheel body name -> (pos, vel, acc)
    wheel_x: dict = field(default_factory=dict)  # wheel body name -> (x, xd, xdd)
    base_R: np.ndarray | None = None  # desired base orientation (default identity)
    com_weight: np.ndarray | None = None  # per-axis override of config.w_com


@dataclass
class WbcSolution:
    qdd: np.ndarray
    lam: np.ndarray  # stacked 3D forces in contact order
    tau: np.ndarray
    contacts: list[ContactSpec]
    residuals: list
    relaxed: list
    solve_time: float
    contact_infos: list
    M: np.ndarray | None = None
    h: np.ndarray | None = None


# ---------------------------------------------------------------------------
# row builders (each over the appropriate sub-vector; assembly pads them)


def dynamics_rows(model: RobotModel, kin, J_c: np.ndarray, M=None, h=None):
    """Floating-base rows of the equation of motion: M qdd - Jc^T lam = -h."""
    kin = _kin(model, kin)
    M = mass_matrix(model, kin) if M is None else M
    h = nonlinear_effects(model, kin) if h is None else h
    A = np.hstack([M[0:6], -J_c.T[0:6]])
    return A, -h[0:6]


def torque_limit_rows(model: RobotModel, kin, J_c: np.ndarray, tau_max, M=None, h=None):
    """Actuated-row torque bounds as linear inequalities over xi."""
    kin = _kin(model, kin)
    M = mass_matrix(model, kin) if M is None else M
    h = nonlinear_effects(model, kin) if h is None else h
    tau_max = np.asarray(tau_max, dtype=float)
    finite = np.isfinite(tau_max)
    if not np.any(finite):
        return np.zeros((0, model.nv + J_c.shape[0])), np.zeros(0)
    T = np.hstack([M[6:], -J_c.T[6:]])[finite]
    hh = h[6:][finite]
    C = np.vstack([T, -T])
    d = np.concatenate([tau_max[finite] - hh, tau_max[finite] + hh])
    return C, d


def friction_rows(contacts: list[ContactSpec], infos: list, mu: float, f_z_min: float, nv: int):
    """Friction pyramid and unilateral margin per contact, world-frame forces."""
    rows, lims = [], []
    n_c = len(contacts)
    for i, (spec, info) in enumerate(zip(contacts, infos)):
        n = np.asarray(spec.normal, dtype=float)
        n = n / np.linalg.norm(n)
        t1 = info.heading if info is not None else np.array([1.0, 0.0, 0.0])
        t1 = t1 - (t1 @ n) * n
        t1 = t1 / np.linalg.norm(t1)
        t2 = cross3(n, t1)
        block = np.vstack([t1 - mu * n, -t1 - mu * n, t2 - mu * n, -t2 - mu * n, -n])
        for r in block:
            row = np.zeros(nv + 3 * n_c)
            row[nv + 3 * i : nv + 3 * i + 3] = r
            rows.append(row)
        lims.extend([0.0, 0.0, 0.0, 0.0, -f_z_min])
    if not rows:
        return np.zeros((0, nv + 3 * n_c)), np.zeros(0)
    return np.vstack(rows), np.asarray(lims)


def nonholonomic_rows(
    model: RobotModel,
    kin,
    wheel: Wheel,
    info: ContactPointInfo,
    velocity_product: str = "geometric",
):
    """Pure-rolling rows over qdd, written at the wheel center.

    Returns (G, b) with G qdd = b. The wheel-spin acceleration couples in
    through (y_axis x r_wc) times the wheel-joint selector. The right-hand
    side collects the velocity-product terms; "geometric" differentiates the
    contact direction, "material" the rim material point.
    """
    kin = _kin(model, kin)
    J, drift = frame_jacobian(model, kin, wheel.body)
    Jv, dv = J[3:6], drift[3:6]
    y = info.y_axis
    r_wc = info.r_wc
    qd_w = kin.state.joint_vel[wheel.joint]
    G = Jv.copy()
    G[:, 6 + wheel.joint] += cross3(y, r_wc)
    w_link = kin.angular_velocity(wheel.body)
    y_dot = cross3(w_link, y)
    b = -dv - cross3(y_dot, r_wc) * qd_w
    if velocity_product == "material":
        b -= cross3(y, cross3(y, r_wc)) * qd_w**2
    elif velocity_product == "geometric":
        z = info.normal
        w_vec = y * (y @ z) - z
        w_norm = np.linalg.norm(w_vec)
        w_hat = w_vec / w_norm
        w_dot = y_dot * (y @ z) + y * (y_dot @ z)
        r_dot = wheel.radius * (np.eye(3) - np.outer(w_hat, w_hat)) @ w_dot / w_norm
        b -= cross3(y * qd_w, r_dot)
    else:
        raise ValueError(f"unknown velocity_product {velocity_product!r}")
    return G, b


def point_contact_rows(model: RobotModel, kin, wheel: Wheel, anchor):
    """Stance rows over qdd: the touchdown rim point keeps zero acceleration."""
    kin = _kin(model, kin)
    J, drift = frame_jacobian_at_world_point(model, kin, wheel.body, anchor)
    return J[3:6], -drift[3:6]


# ---------------------------------------------------------------------------
# assembly


def assemble_and_solve(
    model: RobotModel,
    state,
    refs: WbcRefs,
    contacts: list[ContactSpec],
    config: WbcConfig = None,
) -> WbcSolution:
    """Build the three-level task stack at the estimated state and solve it."""
    t0 = time.perf_counter()
    config = config or WbcConfig()
    kin = _kin(model, state)
    nv = model.nv
    n_c = len(contacts)
    nx = nv + 3 * n_c

    infos = []
    J_blocks = []
    for spec in contacts:
        if spec.mode == ROLLING:
            info = wheel_contact_geometry(model, kin, spec.wheel, spec.normal)
            p_c = info.position
        elif spec.mode == STANCE:
            info = None
            p_c = np.asarray(spec.anchor, dtype=float)
        else:
            raise ValueError(f"contact mode {spec.mode!r} is not load bearing")
        infos.append(info)
        Jc, _ = frame_jacobian_at_world_point(model, kin, spec.wheel.body, p_c)
        J_blocks.append(Jc[3:6])
    J_c = np.vstack(J_blocks) if J_blocks else np.zeros((0, nv))

    M = mass_matrix(model, kin)
    h = nonlinear_effects(model, kin)

    def pad_q(A):  # rows over qdd -> rows over xi
        return np.hstack([A, np.zeros((A.shape[0], 3 * n_c))])

    # ---- priority 0: physics and limits
    A0_rows, b0_rows = [], []
    A_dyn, b_dyn = dynamics_rows(model, kin, J_c, M, h)
    A0_rows.append(A_dyn)
    b0_rows.append(b_dyn)
    for spec, info in zip(contacts, infos):
        if spec.mode == ROLLING:
            G, b = nonholonomic_rows(model, kin, spec.wheel, info, config.velocity_product)
        else:
            G, b = point_contact_rows(model, kin, spec.wheel, spec.anchor)
        A0_rows.append(pad_q(G))
        b0_rows.append(b)
    C_fric, d_fric = friction_rows(contacts, infos, config.mu, config.f_z_min, nv)
    C_tau, d_tau = torque_limit_rows(model, kin, J_c, model.joint_torque_limits(), M, h)
    level0 = PrioritizedTask(
        0,
        A=np.vstack(A0_rows),
        b=np.concatenate(b0_rows),
        C=np.vstack([C_fric, C_tau]) if (C_fric.size or C_tau.size) else None,
        d=np.concatenate([d_fric, d_tau]) if (d_fric.size or d_tau.size) else None,
    )

    # ---- priority 1: tracking
    A1_rows, b1_rows, w1 = [], [], []
    A_G = centroidal_momentum_matrix(model, kin)
    bias_G = centroidal_momentum_bias(model, kin)
    com = com_position(model, kin)
    com_d = com_velocity(model, kin)
    acc_com = tracking_acceleration(
        refs.com_pos, refs.com_vel, refs.com_acc, com, com_d, config.com_gains
    )
    A1_rows.append(pad_q(A_G[3:6]))
    b1_rows.append(model.total_mass * acc_com - bias_G[3:6])
    w_com_src = refs.com_weight if refs.com_weight is not None else config.w_com
    w_com = np.broadcast_to(np.atleast_1d(np.asarray(w_com_src, dtype=float)), (3,))
    w1.extend(list(w_com))

    # attitude must be tracked, not merely damped: a pure momentum-damping
    # angular task lets the trunk drift while accelerating
    R_ref = refs.base_R if refs.base_R is not None else np.eye(3)
    e_base = rot_log(R_ref @ kin.R_w[0].T)
    w_base = kin.R_w[0] @ kin.state.qd[0:3]
    cmd_base = config.base_orient_kp * e_base - config.base_orient_kd * w_base
    A_bo = np.zeros((3, nx))
    A_bo[:, 0:3] = kin.R_w[0]
    A1_rows.append(A_bo)
    b1_rows.append(cmd_base)
    w1.extend([config.w_base_orient] * 3)

    for name, (p_ref, v_ref, a_ref) in refs.swing.items():
        body = model.body_index(name)
        J, drift = frame_jacobian(model, kin, body)
        p = kin.p_w[body]
        v = kin.point_velocity(body)
        cmd = tracking_acceleration(p_ref, v_ref, a_ref, p, v, config.swing_gains)
        A1_rows.append(pad_q(J[3:6]))
        b1_rows.append(cmd - drift[3:6])
        w1.extend([config.w_swing] * 3)

    for name, (x_ref, xd_ref, xdd_ref) in refs.wheel_x.items():
        body = model.body_index(name)
        J, drift = frame_jacobian(model, kin, body)
        p = kin.p_w[body]
        v = kin.point_velocity(body)
        cmd = tracking_acceleration(
            np.array([x_ref]), np.array([xd_ref]), np.array([xdd_ref]),
            np.array([p[0]]), np.array([v[0]]), config.wheel_x_gains,
        )
        A1_rows.append(pad_q(J[3:4]))
        b1_rows.append(cmd - drift[3:4])
        w1.extend([config.w_wheel_x])

    level1 = PrioritizedTask(1, A=np.vstack(A1_rows), b=np.concatenate(b1_rows), w_eq=np.asarray(w1))

    # ---- priority 2: regularization
    A2_rows, b2_rows, w2 = [], [], []
    qdd_post = config.posture_kp * (refs.posture - kin.state.joint_pos) - config.posture_kd * kin.state.joint_vel
    A_post = np.zeros((model.n_joints, nx))
    A_post[:, 6:nv] = np.eye(model.n_joints)
    A2_rows.append(A_post)
    b2_rows.append(qdd_post)
    w2.extend([config.w_posture] * model.n_joints)

    h_ang = A_G[0:3] @ kin.state.qd
    A2_rows.append(pad_q(A_G[0:3]))
    b2_rows.append(-config.momentum_damping * h_ang - bias_G[0:3])
    w2.extend([config.w_momentum] * 3)

    swing_names = set(refs.swing)
    for name in swing_names:
        wheel = model.wheel_for_body(name)
        row = np.hstack([M[6 + wheel.joint], -J_c.T[6 + wheel.joint]])
        A2_rows.append(row[None, :])
        b2_rows.append(np.array([-h[6 + wheel.joint]]))
        w2.extend([config.w_min_wheel_tau])

    if n_c:
        A_f = np.zeros((3 * n_c, nx))
        A_f[:, nv:] = np.eye(3 * n_c)
        A2_rows.append(A_f)
        b2_rows.append(np.zeros(3 * n_c))
        w2.extend([config.w_force_reg] * (3 * n_c))
    A_qdd = np.zeros((nv, nx))
    A_qdd[:, 0:nv] = np.eye(nv)
    A2_rows.append(A_qdd)
    b2_rows.append(np.zeros(nv))
    w2.extend([config.w_qdd_reg] * nv)

    level2 = PrioritizedTask(2, A=np.vstack(A2_rows), b=np.concatenate(b2_rows), w_eq=np.asarray(w2))

    result: HierarchyResult = solve_hierarchy([level0, level1, level2], n=nx)
    xi = result.x
    qdd = xi[0:nv]
    lam = xi[nv:]
    tau = M[6:] @ qdd + h[6:] - J_c.T[6:] @ lam
    return WbcSolution(
        qdd,
        lam,
        tau,
        contacts,
        result.levels,
        result.relaxed_levels,
        time.perf_counter() - t0,
        infos,
        M=M,
        h=h,
    )
