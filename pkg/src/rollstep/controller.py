"""Locomotion controller: planner-to-WBC glue stepped at the control rate.

One instance owns the planner state (gains, template anchor, footstep plan,
swing trajectories) and is ticked at the WBC rate; replanning happens at the
planner rate. Modes follow a timed schedule; phases come from the contact
schedule of the active mode. The controller sees only the estimated state
and assumes flat ground (terrain-blind; feedback absorbs the error).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import Kinematics, com_position, com_velocity, wheel_contact_geometry
from .model import RobotModel, RobotState
from .planner import (
    FootstepProblem,
    RollingMpc,
    SwingTrajectory,
    optimize_footsteps,
    reconstruct_com_trajectory,
    rolling_control,
    swing_trajectory,
    synthesize_sagittal_lqr,
)
from .posture import nominal_posture
from .templates import (
    DS,
    LS,
    RS,
    ContactSchedule,
    PendulumParams,
    cart_lipm_propagate,
    schedule_advance,
)
from .numerics import HierarchyInfeasibleError
from .wbc import ROLLING, STANCE, ContactSpec, WbcConfig, WbcRefs, assemble_and_solve


@dataclass
class PlannerConfig:
    rate_hz: float = 100.0
    T_s: float = 0.4
    N: int = 3
    d: float = 0.20
    d_min: float = 0.10
    d_max: float = 0.35
    Q_step: float = 10.0
    R_step: float = 1.0
    lqr_Q: tuple = (1.0, 1e4, 1.0, 1e3)
    lqr_R: float = 10.0
    use_mpc: bool = False
    mpc_horizon: int = 40
    mpc_dt: float = 0.01
    mpc_L_kin: float | None = None
    mpc_u_max: float | None = None
    apex: float = 0.12
    swing_freeze: float = 0.05
    ds_dwell: float = 0.6  # double-support dwell at mode transitions
    weight_shift: float = 0.6  # CoM shift toward the first support during the dwell
    knee_bend: float = 0.6


@dataclass
class ControllerDebug:
    u_x: float = 0.0
    first_step: float | None = None
    phase: str = DS
    mode: str = "rolling"
    T0: float = math.inf
    wbc_residuals: list = field(default_factory=list)
    wbc_relaxed: list = field(default_factory=list)
    solve_time: float = 0.0
    com_ref: np.ndarray | None = None
    lam: np.ndarray | None = None
    contact_modes: dict = field(default_factory=dict)
    shared_dynamics: tuple | None = None  # (kin, M, h) at the estimated state
    infeasible: bool = False


class LocomotionController:
    def __init__(
        self,
        model: RobotModel,
        mode_plan: list[tuple[float, str]],
        velocity_fn,
        planner_cfg: PlannerConfig = None,
        wbc_cfg: WbcConfig = None,
        control_dt: float = 1e-3,
    ):
        self.model = model
        self.cfg = planner_cfg or PlannerConfig()
        self.wbc_cfg = wbc_cfg or WbcConfig()
        self.control_dt = control_dt
        self.velocity_fn = velocity_fn
        plan = []
        for entry in mode_plan:
            if len(entry) == 2:
                plan.append((float(entry[0]), entry[1], None))
            else:
                plan.append((float(entry[0]), entry[1], entry[2]))
        self.mode_plan = sorted(plan, key=lambda s: s[0])
        if not self.mode_plan or self.mode_plan[0][0] > 0.0:
            raise ValueError("mode plan must start at t = 0")

        joints, base_h = nominal_posture(model, self.cfg.knee_bend)
        self.posture_q = joints
        self.base_height = base_h
        from .model import neutral_state

        st0 = neutral_state(model, base_h, joints)
        self.z_c = float(com_position(model, st0)[2])
        self.params = PendulumParams(z_c=self.z_c, g=model.gravity)
        self.lqr = synthesize_sagittal_lqr(self.params, np.asarray(self.cfg.lqr_Q), self.cfg.lqr_R)
        self.mpc = (
            RollingMpc(
                self.lqr,
                horizon=self.cfg.mpc_horizon,
                dt=self.cfg.mpc_dt,
                L_kin=self.cfg.mpc_L_kin,
                u_max=self.cfg.mpc_u_max,
            )
            if self.cfg.use_mpc
            else None
        )

        self.planner_period = 1.0 / self.cfg.rate_hz
        self._segment = -1
        self._schedule: ContactSchedule | None = None
        self._phase_key = None
        self._last_plan_t = -math.inf
        self._sag_anchor = None  # (t_tick, x_template(4,), u)
        self._y_traj = None  # frontal CoM trajectory (walking/hybrid), t_tick
        self._x_traj = None  # sagittal CoM trajectory (walking), t_tick
        self._y_hold = 0.0
        self._swing: SwingTrajectory | None = None
        self._swing_start_t = 0.0
        self._stance_anchor = {}
        self._support_entry_x = {}
        self._last_sol = None

    # -- mode / phase bookkeeping ------------------------------------------

    def mode_at(self, t: float) -> str:
        mode = self.mode_plan[0][1]
        for t_i, m_i, _ in self.mode_plan:
            if t >= t_i - 1e-12:
                mode = m_i
        return mode

    def _segment_index(self, t: float) -> int:
        idx = 0
        for i, (t_i, _, _) in enumerate(self.mode_plan):
            if t >= t_i - 1e-12:
                idx = i
        return idx

    def _enter_segment(self, idx: int, est: RobotState, t: float):
        self._segment = idx
        t_start, mode, first = self.mode_plan[idx]
        lead = self.cfg.ds_dwell if (mode == "rolling" and idx > 0) else 0.0
        if first is None:
            first = LS
        # stepping segments open with a weight-shift double support: the CoM
        # moves toward the first support so the first fall is gentle and the
        # gait starts near its crossing limit cycle
        if mode in ("walking", "hybrid") and idx > 0 or mode in ("walking", "hybrid"):
            lead = self.cfg.ds_dwell
        self._schedule = ContactSchedule(
            mode, T_s=self.cfg.T_s, first_support=first, t_start=t_start, lead_in_ds=lead
        )
        self._ds_shift = None
        self._phase_key = None
        kin = Kinematics(self.model, est)
        wl, wr = self.model.wheels[0], self.model.wheels[1]
        self._y_hold = 0.5 * float(kin.p_w[wl.body][1] + kin.p_w[wr.body][1])

    def _support_wheel(self, phase_kind: str):
        # wheel 0 is the left wheel in the packaged model
        return self.model.wheels[0] if phase_kind == LS else self.model.wheels[1]

    def _swing_wheel(self, phase_kind: str):
        return self.model.wheels[1] if phase_kind == LS else self.model.wheels[0]

    # -- planner ------------------------------------------------------------

    def _enter_phase(self, est: RobotState, t: float, phase, T0: float, mode: str):
        kin = Kinematics(self.model, est)
        if phase.kind == DS:
            self._swing = None
            self._stance_anchor = {}
            if mode == "walking":
                # plant both feet for the weight shift
                for w in self.model.wheels:
                    info = wheel_contact_geometry(self.model, kin, w)
                    self._stance_anchor[w.body] = info.position.copy()
            if mode in ("walking", "hybrid") and math.isfinite(T0):
                first = self._schedule.first_support
                sup = self._support_wheel(first)
                com = com_position(self.model, kin)
                com_d = com_velocity(self.model, kin)
                target = (1.0 - self.cfg.weight_shift) * com[1] + self.cfg.weight_shift * float(
                    kin.p_w[sup.body][1]
                )
                from .planner import _quintic

                self._ds_shift = (t, T0, _quintic(com[1], com_d[1], 0.0, target, 0.0, 0.0, T0), com[0])
            return
        sup = self._support_wheel(phase.kind)
        swg = self._swing_wheel(phase.kind)
        if mode == "walking":
            info = wheel_contact_geometry(self.model, kin, sup)
            self._stance_anchor = {sup.body: info.position.copy()}
        else:
            self._stance_anchor = {}
        start = kin.p_w[swg.body].copy()
        target = start.copy()
        target[2] = swg.radius
        self._swing = swing_trajectory(start, target, max(T0, 2 * self.control_dt), self.cfg.apex)
        self._swing_start_t = t

    def _replan(self, est, t: float, phase, T0: float, mode: str):
        kin = est if isinstance(est, Kinematics) else Kinematics(self.model, est)
        com = com_position(self.model, kin)
        com_d = com_velocity(self.model, kin)
        vx_ref, vy_ref = self.velocity_fn(t)

        if (mode in ("rolling", "hybrid") or phase.kind == DS) and not (
            mode == "walking" and phase.kind == DS
        ):
            # sagittal rolling template anchored at the measured wheel line
            if phase.kind == DS:
                wheels = list(self.model.wheels)
            else:
                wheels = [self._support_wheel(phase.kind)]
            xp = float(np.mean([kin.p_w[w.body][0] for w in wheels]))
            xpd = float(np.mean([kin.point_velocity(w.body)[0] for w in wheels]))
            x_hat = np.array([com[0], com_d[0], xp, xpd])
            if self.mpc is not None:
                u = self.mpc.solve(x_hat, vx_ref).u
            else:
                u = rolling_control(self.lqr, x_hat, vx_ref)
            self._sag_anchor = (t, x_hat, u)
            self._x_traj = None

        if phase.kind == DS:
            self._y_traj = None
            return

        sup = self._support_wheel(phase.kind)
        swg = self._swing_wheel(phase.kind)
        s_sign = +1 if phase.kind == LS else -1
        T0_c = min(max(T0, 1e-3), self.cfg.T_s)
        anchor = self._stance_anchor.get(sup.body)
        pivot_y = float(anchor[1]) if anchor is not None else float(kin.p_w[sup.body][1])
        pivot_x = float(anchor[0]) if anchor is not None else float(kin.p_w[sup.body][0])
        y_prob = FootstepProblem(
            self.params,
            np.array([com[1], com_d[1]]),
            pivot_y,
            T0_c,
            self.cfg.T_s,
            self.cfg.N,
            vy_ref,
            self.cfg.d,
            s_sign,
            self.cfg.d_min,
            self.cfg.d_max,
            self.cfg.Q_step,
            self.cfg.R_step,
        )
        y_plan = optimize_footsteps(y_prob)
        self._y_traj = (t, reconstruct_com_trajectory(y_plan, y_prob))
        swing_target_y = y_plan.first_step

        if mode == "walking":
            x_prob = FootstepProblem.sagittal(
                self.params,
                np.array([com[0], com_d[0]]),
                pivot_x,
                T0_c,
                self.cfg.T_s,
                self.cfg.N,
                vx_ref,
                self.cfg.d_max,
                self.cfg.Q_step,
                self.cfg.R_step,
            )
            x_plan = optimize_footsteps(x_prob)
            self._x_traj = (t, reconstruct_com_trajectory(x_plan, x_prob))
            swing_target_x = x_plan.first_step
        else:
            # hybrid: land the swing wheel beside the rolling support wheel
            swing_target_x = self._sagittal_ref(t + T0)[0][2]

        if self._swing is not None and T0 > self.cfg.swing_freeze:
            target = np.array([swing_target_x, swing_target_y, swg.radius])
            self._swing = self._swing.retarget(t - self._swing_start_t, target)
            self._swing_start_t = t

    # -- reference evaluation -------------------------------------------------

    def _sagittal_ref(self, t: float):
        """Template state and input at time t; (state, u)."""
        t0, x0, u = self._sag_anchor
        return cart_lipm_propagate(self.params, x0, u, max(t - t0, 0.0)), u

    def _build_refs(self, est, t: float, phase, T0: float, mode: str) -> tuple:
        kin = est if isinstance(est, Kinematics) else Kinematics(self.model, est)
        refs = WbcRefs(
            com_pos=np.zeros(3),
            com_vel=np.zeros(3),
            com_acc=np.zeros(3),
            posture=self.posture_q,
        )
        w2 = self.params.omega**2

        walking_ds = mode == "walking" and phase.kind == DS
        # sagittal
        if walking_ds and self._ds_shift is not None:
            refs.com_pos[0] = self._ds_shift[3]
        elif self._sag_anchor is not None and (mode in ("rolling", "hybrid") or phase.kind == DS):
            x_tpl, u = self._sagittal_ref(t)
            refs.com_pos[0] = x_tpl[0]
            refs.com_vel[0] = x_tpl[1]
            refs.com_acc[0] = w2 * (x_tpl[0] - x_tpl[2])
            # while the wheel line realizes the template, a heavy CoM-x task
            # fights the contact physics and destabilizes the velocity loop
            w = np.broadcast_to(np.atleast_1d(np.asarray(self.wbc_cfg.w_com, dtype=float)), (3,)).copy()
            w[0] = min(w[0], 0.5)
            refs.com_weight = w
            if phase.kind == DS:
                rolling_wheels = list(self.model.wheels)
            else:
                rolling_wheels = [self._support_wheel(phase.kind)]
            for w in rolling_wheels:
                name = self.model.bodies[w.body].name
                refs.wheel_x[name] = (float(x_tpl[2]), float(x_tpl[3]), float(u))
        elif self._x_traj is not None:
            t0, traj = self._x_traj
            y = traj.state_at(t - t0)
            piv = traj.pivot_at(t - t0)
            refs.com_pos[0] = y[0]
            refs.com_vel[0] = y[1]
            refs.com_acc[0] = w2 * (y[0] - piv)

        # frontal
        if phase.kind == DS and self._ds_shift is not None:
            from .planner import _quintic_eval

            t0, T, coef, _ = self._ds_shift
            p, v, a = _quintic_eval(coef, min(max(t - t0, 0.0), T))
            refs.com_pos[1] = float(np.atleast_1d(p)[0])
            refs.com_vel[1] = float(np.atleast_1d(v)[0])
            refs.com_acc[1] = float(np.atleast_1d(a)[0])
        elif phase.kind == DS or self._y_traj is None:
            refs.com_pos[1] = self._y_hold
            refs.com_vel[1] = 0.0
            refs.com_acc[1] = 0.0
        else:
            t0, traj = self._y_traj
            y = traj.state_at(t - t0)
            piv = traj.pivot_at(t - t0)
            refs.com_pos[1] = y[0]
            refs.com_vel[1] = y[1]
            refs.com_acc[1] = w2 * (y[0] - piv)

        # vertical
        refs.com_pos[2] = self.z_c
        refs.com_vel[2] = 0.0
        refs.com_acc[2] = 0.0

        contacts = []
        contact_modes = {}
        if phase.kind == DS:
            for wi, w in enumerate(self.model.wheels):
                if mode == "walking":
                    anchor = self._stance_anchor.get(w.body)
                    contacts.append(ContactSpec(w, STANCE, anchor=anchor))
                    contact_modes[wi] = STANCE
                else:
                    contacts.append(ContactSpec(w, ROLLING))
                    contact_modes[wi] = ROLLING
        else:
            sup = self._support_wheel(phase.kind)
            swg = self._swing_wheel(phase.kind)
            sup_idx = self.model.wheels.index(sup)
            swg_idx = self.model.wheels.index(swg)
            if mode == "walking":
                contacts.append(ContactSpec(sup, STANCE, anchor=self._stance_anchor[sup.body]))
                contact_modes[sup_idx] = STANCE
            else:
                contacts.append(ContactSpec(sup, ROLLING))
                contact_modes[sup_idx] = ROLLING
            contact_modes[swg_idx] = "swing"
            if self._swing is not None:
                pos, vel, acc = self._swing.evaluate(t - self._swing_start_t)
                refs.swing[self.model.bodies[swg.body].name] = (pos, vel, acc)
        return refs, contacts, contact_modes

    # -- main tick ------------------------------------------------------------

    def update(self, est: RobotState, t: float, kin: Kinematics | None = None):
        if kin is None:
            kin = Kinematics(self.model, est)
        seg = self._segment_index(t)
        if seg != self._segment:
            self._enter_segment(seg, est, t)
        mode = self.mode_plan[seg][1]
        phase, T0 = schedule_advance(self._schedule, t)
        key = (seg, phase.kind, round(phase.t_start, 9))
        if key != self._phase_key:
            self._phase_key = key
            self._enter_phase(est, t, phase, T0, mode)
            self._last_plan_t = -math.inf

        if t - self._last_plan_t >= self.planner_period - 1e-9:
            self._replan(kin, t, phase, T0, mode)
            self._last_plan_t = t

        refs, contacts, contact_modes = self._build_refs(kin, t, phase, T0, mode)
        try:
            sol = assemble_and_solve(self.model, kin, refs, contacts, self.wbc_cfg)
            self._last_sol = sol
            infeasible = False
        except HierarchyInfeasibleError:
            # physics-level task conflict (usually mid-fall): hold the last
            # torque command and surface the failure in the log
            sol = self._last_sol
            infeasible = True
            if sol is None:
                raise
        dbg = ControllerDebug(
            u_x=self._sag_anchor[2] if self._sag_anchor else 0.0,
            phase=phase.kind,
            mode=mode,
            T0=T0,
            wbc_residuals=[r.residual for r in sol.residuals],
            wbc_relaxed=sol.relaxed,
            solve_time=sol.solve_time,
            com_ref=refs.com_pos.copy(),
            lam=sol.lam.copy(),
            contact_modes=contact_modes,
            shared_dynamics=(kin, sol.M, sol.h) if not infeasible else None,
            infeasible=infeasible,
        )
        return sol.tau, dbg
