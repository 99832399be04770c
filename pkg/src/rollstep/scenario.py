"""Scenario files: schema, validation, and the pieces they configure."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
import yaml

from .controller import PlannerConfig
from .simulator import EstimatorConfig
from .wbc import TrackingGains, WbcConfig

SCHEMA_VERSION = 1


class ScenarioError(ValueError):
    """Scenario file failed validation."""


@dataclass
class ScenarioConfig:
    name: str
    duration: float
    modes: list  # [(t, mode, first_support|None)]
    velocity: list  # [(t, vx, vy)] piecewise-linear knots
    terrain: dict = field(default_factory=lambda: {"kind": "flat"})
    model: str = "default"
    seed: int = 0
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    wbc: WbcConfig = field(default_factory=WbcConfig)
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    sim_dt: float = 1e-3
    baumgarte_omega: float = 50.0
    baumgarte_zeta: float = 1.0
    fall_height_ratio: float = 0.5  # fall when base height < ratio * z_c
    fall_tilt: float = 0.5  # rad

    def velocity_fn(self):
        knots = sorted(self.velocity)
        ts = np.array([k[0] for k in knots])
        vx = np.array([k[1] for k in knots])
        vy = np.array([k[2] for k in knots])

        def fn(t: float):
            return (
                float(np.interp(t, ts, vx)),
                float(np.interp(t, ts, vy)),
            )

        return fn


def _dataclass_update(obj, overrides: dict, path: str):
    if not overrides:
        return obj
    valid = {f.name for f in dataclasses.fields(obj)}
    updates = {}
    for key, val in overrides.items():
        if key not in valid:
            raise ScenarioError(f"{path}: unknown field {key!r} (valid: {sorted(valid)})")
        current = getattr(obj, key)
        if isinstance(current, TrackingGains):
            val = TrackingGains(np.asarray(val[0], dtype=float), np.asarray(val[1], dtype=float))
        elif isinstance(current, tuple):
            val = tuple(val)
        updates[key] = val
    return dataclasses.replace(obj, **updates)


def scenario_from_dict(doc: dict, name: str = "scenario") -> ScenarioConfig:
    if not isinstance(doc, dict):
        raise ScenarioError(f"{name}: top level must be a mapping")
    version = doc.get("version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ScenarioError(f"{name}: unsupported schema version {version}")
    duration = float(doc.get("duration", 0.0))
    if duration <= 0.0:
        raise ScenarioError(f"{name}: duration must be positive")

    modes = []
    for entry in doc.get("modes", [{"t": 0.0, "mode": "rolling"}]):
        mode = entry.get("mode")
        if mode not in ("rolling", "walking", "hybrid"):
            raise ScenarioError(f"{name}: unknown mode {mode!r}")
        modes.append((float(entry.get("t", 0.0)), mode, entry.get("first_support")))
    modes.sort(key=lambda m: m[0])
    if modes[0][0] != 0.0:
        raise ScenarioError(f"{name}: the first mode must start at t = 0")
    for a, b in zip(modes, modes[1:]):
        if b[0] <= a[0]:
            raise ScenarioError(f"{name}: mode switch times must strictly increase")

    velocity = []
    for entry in doc.get("velocity", [{"t": 0.0, "vx": 0.0, "vy": 0.0}]):
        velocity.append(
            (float(entry.get("t", 0.0)), float(entry.get("vx", 0.0)), float(entry.get("vy", 0.0)))
        )
    if not velocity:
        velocity = [(0.0, 0.0, 0.0)]

    seed = int(doc.get("seed", 0))
    terrain = dict(doc.get("terrain", {"kind": "flat"}))
    terrain.setdefault("seed", seed)

    cfg = ScenarioConfig(
        name=doc.get("name", name),
        duration=duration,
        modes=modes,
        velocity=velocity,
        terrain=terrain,
        model=doc.get("model", "default"),
        seed=seed,
    )
    cfg.planner = _dataclass_update(cfg.planner, doc.get("planner", {}), f"{name}.planner")
    cfg.wbc = _dataclass_update(cfg.wbc, doc.get("wbc", {}), f"{name}.wbc")
    est = dict(doc.get("estimator", {}))
    est.setdefault("seed", seed)
    cfg.estimator = _dataclass_update(cfg.estimator, est, f"{name}.estimator")
    sim = doc.get("simulator", {})
    cfg.sim_dt = float(sim.get("dt", cfg.sim_dt))
    cfg.baumgarte_omega = float(sim.get("baumgarte_omega", cfg.baumgarte_omega))
    cfg.baumgarte_zeta = float(sim.get("baumgarte_zeta", cfg.baumgarte_zeta))
    fall = doc.get("fall", {})
    cfg.fall_height_ratio = float(fall.get("height_ratio", cfg.fall_height_ratio))
    cfg.fall_tilt = float(fall.get("tilt", cfg.fall_tilt))
    return cfg


def load_scenario(path) -> ScenarioConfig:
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    return scenario_from_dict(doc, name=str(path))


def packaged_scenario(name: str) -> ScenarioConfig:
    ref = resources.files("rollstep") / "scenarios" / f"{name}.yaml"
    with resources.as_file(ref) as p:
        return load_scenario(p)
