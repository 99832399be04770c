"""Scenario execution: the planner/WBC/simulator loop, logging and metrics.

The loop is counter-driven: the controller replans internally at its own
rate while torque updates and simulator steps share the 1 ms tick. Runs are
fully determined by (config, seed); the log is written as CSV plus a JSON
metrics summary.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .controller import LocomotionController
from .dynamics import Kinematics, com_position, com_velocity
from .model import default_model, load_model, neutral_state
from .posture import nominal_posture
from .scenario import ScenarioConfig, load_scenario
from .simulator import Estimator, Simulator
from .spatial import rpy_from_rot
from .terrain import terrain_from_spec

LOG_SCHEMA_VERSION = 1

_MODE_CODE = {"rolling": 0, "walking": 1, "hybrid": 2}
_PHASE_CODE = {"DS": 0, "LS": 1, "RS": 2}


@dataclass
class RunLog:
    columns: dict = field(default_factory=dict)
    events: list = field(default_factory=list)  # (tick, t, kind, data)
    schema_version: int = LOG_SCHEMA_VERSION

    def append(self, row: dict):
        for key, val in row.items():
            self.columns.setdefault(key, []).append(float(val))

    @property
    def channels(self) -> list[str]:
        return list(self.columns)

    def array(self, channel: str) -> np.ndarray:
        if channel not in self.columns:
            raise KeyError(
                f"unknown channel {channel!r}; available: {', '.join(sorted(self.columns))}"
            )
        return np.asarray(self.columns[channel])

    def write_csv(self, path):
        names = list(self.columns)
        cols = [self.columns[n] for n in names]
        with open(path, "w") as fh:
            fh.write(",".join(names) + "\n")
            for i in range(len(cols[0]) if cols else 0):
                fh.write(",".join(f"{c[i]:.17g}" for c in cols) + "\n")

    def write_events(self, path):
        with open(path, "w") as fh:
            for tick, t, kind, data in self.events:
                fh.write(json.dumps({"tick": tick, "t": t, "kind": kind, **data}) + "\n")


def read_log_csv(path) -> RunLog:
    log = RunLog()
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        cols = {name: [] for name in header}
        for line in fh:
            for name, val in zip(header, line.strip().split(",")):
                cols[name].append(float(val))
    log.columns = cols
    return log


@dataclass
class RunResult:
    status: int  # 0 ok, 1 fall/failure
    metrics: dict
    log: RunLog


def run_scenario(config: ScenarioConfig | str, out_dir=None, seed=None) -> RunResult:
    """Execute a scenario; optionally write <out>/log.csv, events.jsonl, metrics.json."""
    if not isinstance(config, ScenarioConfig):
        config = load_scenario(config)
    if seed is not None:
        import dataclasses

        config = dataclasses.replace(config)
        config.seed = int(seed)
        config.estimator = dataclasses.replace(config.estimator, seed=int(seed))
        config.terrain = dict(config.terrain)
        config.terrain["seed"] = int(seed)

    model = default_model() if config.model == "default" else load_model(config.model)
    terrain = terrain_from_spec(config.terrain)
    controller = LocomotionController(
        model,
        config.modes,
        config.velocity_fn(),
        planner_cfg=config.planner,
        wbc_cfg=config.wbc,
        control_dt=config.sim_dt,
    )
    joints, base_h = nominal_posture(model, config.planner.knee_bend)
    state0 = neutral_state(model, base_h, joints)
    sim = Simulator(
        model,
        terrain,
        state0,
        dt=config.sim_dt,
        baumgarte_omega=config.baumgarte_omega,
        baumgarte_zeta=config.baumgarte_zeta,
    )
    estimator = Estimator(config.estimator)
    vel_fn = config.velocity_fn()

    log = RunLog()
    n_ticks = int(round(config.duration / config.sim_dt))
    status = 0
    fall_info = None
    z_c = controller.z_c
    support_switches = 0
    prev_phase = None
    n_events_seen = 0

    for k in range(n_ticks):
        t = k * config.sim_dt
        est = estimator.estimate(sim.state)
        kin_est = Kinematics(model, est)
        tau, dbg = controller.update(est, t, kin=kin_est if est is sim.state else None)
        sim.set_contact_modes(dbg.contact_modes)
        shared = dbg.shared_dynamics if est is sim.state else None
        sim.step(tau, stage1=shared)

        # log the pre-step true state at time t (shared kinematics when the
        # estimate is noiseless)
        kin_state = est if est is sim.state else sim.state
        kin_log = kin_est if kin_state is est else Kinematics(model, kin_state)
        com = com_position(model, kin_log)
        com_d = com_velocity(model, kin_log)
        rpy = rpy_from_rot(kin_state.base_rot)
        vx_ref, vy_ref = vel_fn(t)
        lam = dbg.lam if dbg.lam is not None else np.zeros(0)
        lam_by_wheel = {}
        idx = 0
        for wi, mode in sorted(dbg.contact_modes.items()):
            if mode in ("rolling", "stance") and idx * 3 + 3 <= lam.size:
                lam_by_wheel[wi] = lam[idx * 3 : idx * 3 + 3]
                idx += 1
        row = {
            "t": t,
            "com_x": com[0],
            "com_y": com[1],
            "com_z": com[2],
            "com_velocity_x": com_d[0],
            "com_velocity_y": com_d[1],
            "com_velocity_z": com_d[2],
            "base_x": kin_state.base_pos[0],
            "base_y": kin_state.base_pos[1],
            "base_z": kin_state.base_pos[2],
            "roll": rpy[0],
            "pitch": rpy[1],
            "yaw": rpy[2],
            "vx_ref": vx_ref,
            "vy_ref": vy_ref,
            "u_x": dbg.u_x,
            "mode": _MODE_CODE[dbg.mode],
            "phase": _PHASE_CODE[dbg.phase],
            "solve_time": dbg.solve_time,
            "max_slip": sim.drift.max_slip,
            "max_gap": sim.drift.max_gap,
        }
        for j in range(model.n_joints):
            row[f"tau_{j}"] = tau[j]
        for wi in range(len(model.wheels)):
            f = lam_by_wheel.get(wi, np.zeros(3))
            for axis, comp in zip("xyz", f):
                row[f"lambda_{wi}_{axis}"] = comp
        log.append(row)

        if dbg.wbc_relaxed:
            log.events.append((k, t, "wbc_relaxed", {"levels": list(dbg.wbc_relaxed)}))
        if dbg.infeasible:
            log.events.append((k, t, "wbc_infeasible", {}))
        for ev in sim.events[n_events_seen:]:
            log.events.append((k, ev.t, ev.kind, dict(ev.data)))
        n_events_seen = len(sim.events)

        if dbg.phase in ("LS", "RS") and dbg.phase != prev_phase and prev_phase in ("LS", "RS"):
            support_switches += 1
        prev_phase = dbg.phase

        tilt_bad = abs(rpy[0]) > config.fall_tilt or abs(rpy[1]) > config.fall_tilt
        height_bad = kin_state.base_pos[2] < config.fall_height_ratio * z_c
        if tilt_bad or height_bad:
            status = 1
            fall_info = {"t": t, "roll": rpy[0], "pitch": rpy[1], "base_z": kin_state.base_pos[2]}
            log.events.append((k, t, "fall", fall_info))
            break

    metrics = _metrics(config, log, sim, support_switches, fall_info)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        log.write_csv(os.path.join(out_dir, "log.csv"))
        log.write_events(os.path.join(out_dir, "events.jsonl"))
        with open(os.path.join(out_dir, "metrics.json"), "w") as fh:
            json.dump(metrics, fh, indent=2, default=float)
    return RunResult(status, metrics, log)


def _metrics(config, log: RunLog, sim, support_switches, fall_info) -> dict:
    t = log.array("t") if log.columns else np.zeros(0)
    out = {
        "scenario": config.name,
        "seed": config.seed,
        "duration_simulated": float(t[-1] + config.sim_dt) if t.size else 0.0,
        "fall": fall_info is not None,
        "support_switches": support_switches,
        "max_slip": sim.drift.max_slip,
        "max_gap": sim.drift.max_gap,
        "max_stance_drift": sim.drift.max_stance_drift,
        "events": len(log.events),
    }
    if fall_info:
        out["fall_info"] = fall_info
    if not t.size:
        return out
    vx = log.array("com_velocity_x")
    vx_ref = log.array("vx_ref")
    out["velocity_rms_error"] = float(np.sqrt(np.mean((vx - vx_ref) ** 2)))
    tail = t >= t[-1] - 2.0
    out["steady_state_velocity_error"] = float(np.mean(np.abs(vx[tail] - vx_ref[tail])))
    out["max_abs_roll"] = float(np.abs(log.array("roll")).max())
    out["max_abs_pitch"] = float(np.abs(log.array("pitch")).max())
    out["min_base_height"] = float(log.array("base_z").min())
    out["final_com_x"] = float(log.array("com_x")[-1])
    out["final_com_y"] = float(log.array("com_y")[-1])
    out["max_forward_speed"] = float(vx.max())
    out["max_lateral_displacement"] = float(np.abs(log.array("com_y")).max())
    return out


def emit_plot_data(log: RunLog, channels: list[str], out_dir):
    """One two-column text file (t, value) per channel; lossless values."""
    os.makedirs(out_dir, exist_ok=True)
    t = log.array("t")
    paths = []
    for ch in channels:
        vals = log.array(ch)  # raises with the available list on bad names
        path = os.path.join(out_dir, f"{ch}.txt")
        with open(path, "w") as fh:
            fh.write(f"t {ch}\n")
            for ti, vi in zip(t, vals):
                fh.write(f"{ti:.17g} {vi:.17g}\n")
        paths.append(path)
    return paths
