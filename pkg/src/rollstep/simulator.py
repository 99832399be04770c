"""Constraint-consistent forward dynamics with terrain, contact events and a
noise-injectable state estimate.

Contacts are bilateral constraints gated by the contact schedule plus
geometric touchdown/liftoff events: rolling wheels carry the pure-rolling
rows written at the wheel center, stance wheels pin their touchdown rim
point. Both are stabilized with velocity (and, where holonomic, position)
feedback. Any negative normal force raises a liftoff event and releases the
contact instead of pulling on the ground.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import (
    Kinematics,
    com_position,
    frame_jacobian,
    frame_jacobian_at_world_point,
    mass_matrix,
    nonlinear_effects,
    wheel_contact_geometry,
)
from .model import RobotModel, RobotState, Wheel
from .spatial import cross3, quat_from_axis_angle, quat_integrate, quat_mul, quat_normalize, quat_to_rot, skew


def _advance(model: RobotModel, state: RobotState, qd_new, qd_pos, dt: float) -> RobotState:
    """Positions advance with qd_pos, the velocity becomes qd_new."""
    qd_pos = np.asarray(qd_pos, dtype=float)
    q = state.q.copy()
    R = quat_to_rot(q[3:7])
    q[0:3] += R @ qd_pos[3:6] * dt
    q[3:7] = quat_integrate(q[3:7], qd_pos[0:3], dt)
    q[7:] += qd_pos[6:] * dt
    return RobotState(q, np.asarray(qd_new, dtype=float), state.t + dt)

ROLLING, STANCE, SWING = "rolling", "stance", "swing"


@dataclass
class EstimatorConfig:
    """Ground truth plus zero-mean Gaussian noise per channel group."""

    base_pos_std: float = 0.0
    base_orient_std: float = 0.0  # radians, small-angle perturbation
    base_vel_std: float = 0.0
    joint_pos_std: float = 0.0
    joint_vel_std: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("base_pos_std", "base_orient_std", "base_vel_std", "joint_pos_std", "joint_vel_std"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be >= 0")

    @property
    def noiseless(self) -> bool:
        return (
            self.base_pos_std == 0.0
            and self.base_orient_std == 0.0
            and self.base_vel_std == 0.0
            and self.joint_pos_std == 0.0
            and self.joint_vel_std == 0.0
        )


class Estimator:
    def __init__(self, cfg: EstimatorConfig):
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)

    def estimate(self, state: RobotState) -> RobotState:
        cfg = self.cfg
        if cfg.noiseless:
            return state
        q = state.q.copy()
        qd = state.qd.copy()
        n = q.shape[0] - 7
        q[0:3] += self.rng.normal(0.0, cfg.base_pos_std or 0.0, 3) if cfg.base_pos_std else 0.0
        if cfg.base_orient_std:
            rv = self.rng.normal(0.0, cfg.base_orient_std, 3)
            angle = np.linalg.norm(rv)
            if angle > 0.0:
                q[3:7] = quat_normalize(quat_mul(q[3:7], quat_from_axis_angle(rv, angle)))
        if cfg.joint_pos_std:
            q[7:] += self.rng.normal(0.0, cfg.joint_pos_std, n)
        if cfg.base_vel_std:
            qd[0:6] += self.rng.normal(0.0, cfg.base_vel_std, 6)
        if cfg.joint_vel_std:
            qd[6:] += self.rng.normal(0.0, cfg.joint_vel_std, n)
        return RobotState(q, qd, state.t)


@dataclass
class SimEvent:
    t: float
    kind: str  # touchdown | liftoff | torque_clamp | singular_kkt | mode
    data: dict = field(default_factory=dict)


@dataclass
class ContactRecord:
    wheel: Wheel
    mode: str  # ROLLING | STANCE
    anchor: np.ndarray | None = None  # stance: pinned world point
    anchor_local: np.ndarray | None = None  # stance: rim point, body frame
    normal: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))


@dataclass
class DriftMetrics:
    max_slip: float = 0.0  # rolling contact-point speed
    max_gap: float = 0.0  # normal penetration/separation
    max_stance_drift: float = 0.0  # stance anchor position error


class Simulator:
    """Single-owner simulation instance, stepped sequentially."""

    def __init__(
        self,
        model: RobotModel,
        terrain,
        state: RobotState,
        dt: float = 1e-3,
        baumgarte_omega: float = 50.0,
        baumgarte_zeta: float = 1.0,
        touchdown_tol: float = 1e-3,
    ):
        if not 0.0 < dt <= 2e-3:
            raise ValueError("dt must lie in (0, 2 ms]")
        self.model = model
        self.terrain = terrain
        self.state = state.copy()
        self.dt = dt
        self.kb_v = 2.0 * baumgarte_zeta * baumgarte_omega
        self.kb_p = baumgarte_omega**2
        self.touchdown_tol = touchdown_tol
        self.contacts: dict[int, ContactRecord] = {}
        self.events: list[SimEvent] = []
        self.drift = DriftMetrics()
        self.last_lambda: dict[int, np.ndarray] = {}
        self._released: set[int] = set()
        self.lock_base = False
        self._base_lock_pose = (state.base_pos.copy(), state.base_rot.copy())

    # -- contact management -------------------------------------------------

    def wheel_gap(self, kin: Kinematics, wheel: Wheel) -> float:
        """Signed distance of the wheel rim above the terrain along the normal."""
        center = kin.p_w[wheel.body]
        h0, n0 = self.terrain.query(center[0], center[1])
        info = wheel_contact_geometry(self.model, kin, wheel, n0)
        p_c = info.position
        h, n = self.terrain.query(p_c[0], p_c[1])
        return float((p_c - np.array([p_c[0], p_c[1], h])) @ n)

    def set_contact_modes(self, modes: dict[int, str]):
        """Apply the schedule's desired mode per wheel (by wheel index).

        Activation is gated geometrically: a wheel scheduled to bear load
        engages only once its rim is within the touchdown tolerance of the
        terrain (late touchdowns are logged and retried every tick), and it
        is pinned where it actually lands.
        """
        pending = getattr(self, "_pending", set())
        self._pending = pending
        if (
            modes == getattr(self, "_last_modes", None)
            and not self._released
            and not pending
        ):
            return
        self._last_modes = dict(modes)
        kin = Kinematics(self.model, self.state)
        new_rows = []
        # a support hand-over releases the old wheel only after the new one
        # has actually engaged, otherwise the robot goes briefly airborne
        hand_over_wait = any(
            modes.get(wi, SWING) != SWING
            and wi not in self.contacts
            and self.wheel_gap(kin, w) > self.touchdown_tol
            for wi, w in enumerate(self.model.wheels)
        )
        for wi, wheel in enumerate(self.model.wheels):
            want = modes.get(wi, SWING)
            have = self.contacts.get(wi)
            if want == SWING:
                if have is not None and not hand_over_wait:
                    del self.contacts[wi]
                    self.events.append(SimEvent(self.state.t, "liftoff", {"wheel": wi, "reason": "schedule"}))
                self._released.discard(wi)
                pending.discard(wi)
                continue
            if have is not None and have.mode == want:
                continue
            gap = self.wheel_gap(kin, wheel)
            if gap > self.touchdown_tol:
                if wi not in pending and wi not in self._released:
                    self.events.append(
                        SimEvent(self.state.t, "late_touchdown", {"wheel": wi, "gap": gap})
                    )
                pending.add(wi)
                continue
            pending.discard(wi)
            self._released.discard(wi)
            center = kin.p_w[wheel.body]
            h, n = self.terrain.query(center[0], center[1])
            rec = ContactRecord(wheel, want, normal=n)
            if want == STANCE:
                info = wheel_contact_geometry(self.model, kin, wheel, n)
                rec.anchor = info.position.copy()
                rec.anchor_local = kin.R_w[wheel.body].T @ (info.position - kin.p_w[wheel.body])
                _, rec.normal = self.terrain.query(info.position[0], info.position[1])
            self.contacts[wi] = rec
            self.events.append(
                SimEvent(self.state.t, "touchdown", {"wheel": wi, "mode": want, "gap": gap})
            )
            new_rows.append(wi)
        if new_rows:
            self.impact_projection(new_rows)

    def impact_projection(self, wheel_indices=None):
        """Inelastic velocity reset: minimal kinetic-energy change satisfying
        the active contact rows at velocity level."""
        kin = Kinematics(self.model, self.state)
        J = self._contact_rows(kin)[0]
        if J.shape[0] == 0:
            return
        qd = self.state.qd
        resid = J @ qd
        if np.abs(resid).max() < 1e-12:
            return
        M = mass_matrix(self.model, kin)
        Minv_Jt = np.linalg.solve(M, J.T)
        A = J @ Minv_Jt
        A += 1e-12 * np.eye(A.shape[0])
        impulse = np.linalg.solve(A, resid)
        qd_new = qd - Minv_Jt @ impulse
        ke_drop = 0.5 * float(resid @ impulse)
        self.state = RobotState(self.state.q, qd_new, self.state.t)
        self.events.append(SimEvent(self.state.t, "impact", {"ke_drop": ke_drop}))

    # -- constraint rows ----------------------------------------------------

    def _rolling_rows(self, kin: Kinematics, rec: ContactRecord):
        wheel = rec.wheel
        center = kin.p_w[wheel.body]
        h_c, n = self.terrain.query(center[0], center[1])
        info = wheel_contact_geometry(self.model, kin, wheel, n)
        J6, drift6 = frame_jacobian(self.model, kin, wheel.body)
        Jv, Jw = J6[3:6], J6[0:3]
        dv, dw = drift6[3:6], drift6[0:3]
        r = info.r_wc
        # slip map: velocity of the rim material point at the geometric contact
        J_roll = Jv - skew(r) @ Jw
        omega = kin.angular_velocity(wheel.body)
        y, z = info.y_axis, info.normal
        y_dot = cross3(omega, y)
        w_vec = y * (y @ z) - z
        w_norm = np.linalg.norm(w_vec)
        w_hat = w_vec / w_norm
        w_dot = y_dot * (y @ z) + y * (y_dot @ z)
        r_dot = wheel.radius * (np.eye(3) - np.outer(w_hat, w_hat)) @ w_dot / w_norm
        gamma = dv - skew(r) @ dw + cross3(omega, r_dot)
        slip = J_roll @ kin.state.qd
        p_c = info.position
        h, n_c = self.terrain.query(p_c[0], p_c[1])
        gap = (p_c[2] - h) * float(n_c[2])
        rhs = -gamma - self.kb_v * slip - self.kb_p * gap * n_c
        self.drift.max_slip = max(self.drift.max_slip, float(np.linalg.norm(slip)))
        self.drift.max_gap = max(self.drift.max_gap, abs(gap))
        return J_roll, rhs, n_c

    def _stance_rows(self, kin: Kinematics, rec: ContactRecord):
        wheel = rec.wheel
        J6, drift6 = frame_jacobian(self.model, kin, wheel.body, rec.anchor_local)
        p_now = kin.point_world(wheel.body, rec.anchor_local)
        v_now = kin.point_velocity(wheel.body, rec.anchor_local)
        err = p_now - rec.anchor
        rhs = -drift6[3:6] - self.kb_v * v_now - self.kb_p * err
        self.drift.max_stance_drift = max(self.drift.max_stance_drift, float(np.linalg.norm(err)))
        return J6[3:6], rhs, rec.normal

    def _base_lock_rows(self, kin: Kinematics):
        from .spatial import rot_log

        p_ref, R_ref = self._base_lock_pose
        R = kin.R_w[0]
        e_ang = rot_log(R @ R_ref.T)
        w_w = R @ kin.state.qd[0:3]
        v_w = R @ kin.state.qd[3:6]
        J = np.zeros((6, self.model.nv))
        J[:, 0:6] = np.eye(6)
        acc_ang = R.T @ (-self.kb_v * w_w - self.kb_p * e_ang)
        acc_lin = R.T @ (-self.kb_v * v_w - self.kb_p * (kin.p_w[0] - p_ref)) - cross3(
            kin.state.qd[0:3], kin.state.qd[3:6]
        )
        return J, np.concatenate([acc_ang, acc_lin])

    def _contact_rows(self, kin: Kinematics):
        rows, rhss, normals, order = [], [], [], []
        if self.lock_base:
            J0, rhs0 = self._base_lock_rows(kin)
            rows.append(J0)
            rhss.append(rhs0)
        for wi in sorted(self.contacts):
            rec = self.contacts[wi]
            if rec.mode == ROLLING:
                J, rhs, n = self._rolling_rows(kin, rec)
            else:
                J, rhs, n = self._stance_rows(kin, rec)
            rows.append(J)
            rhss.append(rhs)
            normals.append(n)
            order.append(wi)
        J = np.vstack(rows) if rows else np.zeros((0, self.model.nv))
        rhs = np.concatenate(rhss) if rhss else np.zeros(0)
        return J, rhs, normals, order

    # -- stepping -----------------------------------------------------------

    def step(self, tau, stage1=None) -> RobotState:
        """Advance one tick; ``stage1`` may carry (kin, M, h) already
        evaluated at the current state (e.g. by the controller)."""
        tau = np.asarray(tau, dtype=float)
        limits = self.model.joint_torque_limits()
        clamped = np.clip(tau, -limits, limits)
        if np.any(np.abs(tau) > limits + 1e-12):
            worst = int(np.argmax(np.abs(tau) - limits))
            self.events.append(
                SimEvent(self.state.t, "torque_clamp", {"joint": worst, "tau": float(tau[worst])})
            )
        # midpoint (RK2) step: second-order accurate, which keeps flight-phase
        # energy drift well inside budget at dt = 1 ms; contact releases are
        # decided at the first stage and the active set is frozen for the step
        dt = self.dt
        if stage1 is not None and stage1[0].state is self.state:
            kin1, M1, h1 = stage1
        else:
            kin1, M1, h1 = Kinematics(self.model, self.state), None, None
        qdd1, lam_map = self._forward_dynamics(kin1, clamped, M=M1, h=h1)
        self.last_lambda = lam_map
        v_half = self.state.qd + 0.5 * dt * qdd1
        state_half = _advance(self.model, self.state, v_half, self.state.qd, 0.5 * dt)
        kin2 = Kinematics(self.model, state_half)
        qdd2, _ = self._forward_dynamics(kin2, clamped, allow_release=False)
        qd_new = self.state.qd + dt * qdd2
        # midpoint position update: translation needs the midpoint rotation
        q = self.state.q.copy()
        q[0:3] += state_half.base_rot @ v_half[3:6] * dt
        q[3:7] = quat_integrate(q[3:7], v_half[0:3], dt)
        q[7:] += v_half[6:] * dt
        self.state = RobotState(q, qd_new, self.state.t + dt)
        return self.state

    def _forward_dynamics(self, kin: Kinematics, tau, allow_release: bool = True, M=None, h=None):
        for attempt in range(2):  # at most one release-and-resolve pass per step
            J, rhs, normals, order = self._contact_rows(kin)
            if M is None or attempt > 0:
                M = mass_matrix(self.model, kin)
            if h is None or attempt > 0:
                h = nonlinear_effects(self.model, kin)
            gen_force = -h.copy()
            gen_force[6:] += tau
            m = J.shape[0]
            if m == 0:
                return np.linalg.solve(M, gen_force), {}
            # dual regularization keeps redundant contact rows (e.g. two
            # aligned wheels) well posed; the solve stays deterministic
            KKT = np.block([[M, -J.T], [J, -1e-9 * np.eye(m)]])
            vec = np.concatenate([gen_force, rhs])
            try:
                sol = np.linalg.solve(KKT, vec)
            except np.linalg.LinAlgError:
                sol, *_ = np.linalg.lstsq(KKT, vec, rcond=None)
                self.events.append(SimEvent(self.state.t, "singular_kkt", {}))
            qdd = sol[: self.model.nv]
            lam = sol[self.model.nv :]
            offset = 6 if self.lock_base else 0
            lam_map = {}
            release = []
            for k, wi in enumerate(order):
                f = lam[offset + 3 * k : offset + 3 * k + 3]
                lam_map[wi] = f
                if f @ normals[k] < 0.0:
                    release.append(wi)
            if not release or not allow_release:
                return qdd, lam_map
            for wi in release:
                del self.contacts[wi]
                self._released.add(wi)
                self.events.append(
                    SimEvent(self.state.t, "liftoff", {"wheel": wi, "reason": "negative_normal_force"})
                )
        return qdd, lam_map

    # -- diagnostics ----------------------------------------------------------

    def mechanical_energy(self) -> float:
        kin = Kinematics(self.model, self.state)
        M = mass_matrix(self.model, kin)
        ke = 0.5 * float(self.state.qd @ M @ self.state.qd)
        pe = 0.0
        for i, b in enumerate(self.model.bodies):
            pe += b.mass * self.model.gravity * kin.point_world(i, b.com)[2]
        return ke + pe

    def base_tilt(self) -> tuple[float, float]:
        from .spatial import rpy_from_rot

        r, p, _ = rpy_from_rot(self.state.base_rot)
        return float(r), float(p)

    def com(self) -> np.ndarray:
        return com_position(self.model, self.state)
