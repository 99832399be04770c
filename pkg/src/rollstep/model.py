"""Robot model: floating-base kinematic tree with wheels, plus the YAML loader.

Bodies are indexed 0..nb-1 with 0 the floating base; revolute joint j
connects body j+1 to its parent. Joint frames are translated (not rotated)
relative to the parent frame, and each child body frame coincides with its
joint frame; joint axes are unit vectors in the child frame. SI units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
import yaml

from .spatial import quat_normalize, quat_to_rot, spatial_inertia


class ModelError(ValueError):
    """Model file violates an invariant; message carries file:line context."""


@dataclass(frozen=True)
class Body:
    name: str
    mass: float
    com: np.ndarray  # center of mass, body frame
    inertia: np.ndarray  # 3x3 about the com, body axes


@dataclass(frozen=True)
class Joint:
    name: str
    parent: int  # parent body index
    axis: np.ndarray  # unit vector, child frame
    origin: np.ndarray  # joint position in the parent frame
    limits: tuple[float, float] = (-math.inf, math.inf)
    tau_max: float = math.inf


@dataclass(frozen=True)
class Wheel:
    body: int  # wheel body index
    joint: int  # wheel joint index (its axis is the rolling axis)
    radius: float


@dataclass
class RobotModel:
    bodies: list[Body]
    joints: list[Joint]  # joint j drives body j+1
    wheels: list[Wheel]
    gravity: float = 9.81

    def __post_init__(self):
        if len(self.bodies) != len(self.joints) + 1:
            raise ModelError("body/joint count mismatch")
        for j, joint in enumerate(self.joints):
            if not 0 <= joint.parent <= j:
                raise ModelError(f"joint {joint.name!r}: parent index out of order")
        self._name_to_body = {b.name: i for i, b in enumerate(self.bodies)}
        if len(self._name_to_body) != len(self.bodies):
            raise ModelError("duplicate body names")

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    @property
    def nv(self) -> int:
        return 6 + self.n_joints

    @property
    def nq(self) -> int:
        return 7 + self.n_joints

    @property
    def total_mass(self) -> float:
        return float(sum(b.mass for b in self.bodies))

    @property
    def gravity_vector(self) -> np.ndarray:
        return np.array([0.0, 0.0, -self.gravity])

    def body_index(self, name: str) -> int:
        try:
            return self._name_to_body[name]
        except KeyError:
            raise ModelError(f"unknown body {name!r}") from None

    def parent_of(self, body: int) -> int:
        return self.joints[body - 1].parent if body > 0 else -1

    def joint_torque_limits(self) -> np.ndarray:
        return np.array([j.tau_max for j in self.joints])

    def spatial_inertias(self):
        """Per-body 6x6 spatial inertias (cached; the model is immutable)."""
        cached = getattr(self, "_spatial_inertias", None)
        if cached is None:
            cached = [spatial_inertia(b.mass, b.com, b.inertia) for b in self.bodies]
            self._spatial_inertias = cached
        return cached

    def wheel_for_body(self, name: str) -> Wheel:
        idx = self.body_index(name)
        for w in self.wheels:
            if w.body == idx:
                return w
        raise ModelError(f"body {name!r} carries no wheel")


@dataclass
class RobotState:
    """q = [base position, base quaternion wxyz, joint angles];
    qd = [base angular velocity (body frame), base linear velocity (body
    frame), joint rates]. Angular before linear throughout."""

    q: np.ndarray
    qd: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float).copy()
        self.qd = np.asarray(self.qd, dtype=float).copy()
        if not np.all(np.isfinite(self.q)) or not np.all(np.isfinite(self.qd)):
            raise ValueError("non-finite state")
        if abs(np.linalg.norm(self.q[3:7]) - 1.0) > 1e-9:
            raise ValueError("base quaternion is not normalized")
        if self.qd.shape[0] != self.q.shape[0] - 1:
            raise ValueError("q/qd dimension mismatch")

    @property
    def base_pos(self) -> np.ndarray:
        return self.q[0:3]

    @property
    def base_quat(self) -> np.ndarray:
        return self.q[3:7]

    @property
    def base_rot(self) -> np.ndarray:
        return quat_to_rot(self.q[3:7])

    @property
    def joint_pos(self) -> np.ndarray:
        return self.q[7:]

    @property
    def base_ang_vel(self) -> np.ndarray:
        return self.qd[0:3]

    @property
    def base_lin_vel(self) -> np.ndarray:
        return self.qd[3:6]

    @property
    def joint_vel(self) -> np.ndarray:
        return self.qd[6:]

    def copy(self) -> "RobotState":
        return RobotState(self.q.copy(), self.qd.copy(), self.t)


def neutral_state(model: RobotModel, base_height: float, joint_pos=None) -> RobotState:
    q = np.zeros(model.nq)
    q[2] = base_height
    q[3] = 1.0
    if joint_pos is not None:
        q[7:] = np.asarray(joint_pos, dtype=float)
    return RobotState(q, np.zeros(model.nv))


# ---------------------------------------------------------------------------
# YAML loader with line-aware validation


class _LineLoader(yaml.SafeLoader):
    pass


def _construct_mapping(loader, node, deep=False):
    mapping = yaml.SafeLoader.construct_mapping(loader, node, deep=deep)
    mapping["__line__"] = node.start_mark.line + 1
    return mapping


_LineLoader.add_constructor(
    yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_mapping
)


def _err(path, node, msg):
    line = node.get("__line__", "?") if isinstance(node, dict) else "?"
    raise ModelError(f"{path}:{line}: {msg}")


def _vec3(node, key, path, default=None):
    if key not in node:
        if default is not None:
            return np.asarray(default, dtype=float)
        _err(path, node, f"missing field {key!r}")
    v = np.asarray(node[key], dtype=float).ravel()
    if v.shape != (3,):
        _err(path, node, f"{key!r} must have 3 components")
    return v


def _inertia(node, path):
    raw = node.get("inertia")
    if raw is None:
        _err(path, node, "missing field 'inertia'")
    if isinstance(raw, dict):
        I = np.array(
            [
                [raw.get("ixx", 0.0), raw.get("ixy", 0.0), raw.get("ixz", 0.0)],
                [raw.get("ixy", 0.0), raw.get("iyy", 0.0), raw.get("iyz", 0.0)],
                [raw.get("ixz", 0.0), raw.get("iyz", 0.0), raw.get("izz", 0.0)],
            ],
            dtype=float,
        )
    else:
        I = np.asarray(raw, dtype=float)
        if I.shape == (3,):
            I = np.diag(I)
    if I.shape != (3, 3):
        _err(path, node, "'inertia' must be a 3x3 matrix, diagonal triple or ixx/iyy/... map")
    if np.abs(I - I.T).max() > 1e-12:
        _err(path, node, "inertia tensor must be symmetric")
    if np.linalg.eigvalsh(I).min() <= 0.0:
        _err(path, node, "inertia tensor must be positive definite")
    return I


def _body_from(node, path) -> Body:
    name = node.get("name")
    if not name:
        _err(path, node, "missing field 'name'")
    mass = float(node.get("mass", 0.0))
    if mass <= 0.0:
        _err(path, node, f"link {name!r}: mass must be > 0")
    return Body(name, mass, _vec3(node, "com", path, default=[0, 0, 0]), _inertia(node, path))


def load_model(path) -> RobotModel:
    """Load and validate a robot model file; errors report file:line."""
    path = str(path)
    with open(path) as fh:
        try:
            doc = yaml.load(fh, Loader=_LineLoader)
        except yaml.YAMLError as exc:
            raise ModelError(f"{path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ModelError(f"{path}: top level must be a mapping")

    base_node = doc.get("base")
    if not isinstance(base_node, dict):
        raise ModelError(f"{path}: missing 'base' section")
    bodies = [_body_from(base_node, path)]
    joints: list[Joint] = []
    name_to_idx = {bodies[0].name: 0}

    for node in doc.get("links", []):
        jn = node.get("joint")
        if not isinstance(jn, dict):
            _err(path, node, "link is missing its 'joint' mapping")
        parent_name = node.get("parent")
        if parent_name not in name_to_idx:
            _err(path, node, f"unknown parent {parent_name!r} (parents must be declared first)")
        axis = _vec3(jn, "axis", path)
        norm = np.linalg.norm(axis)
        if abs(norm - 1.0) > 1e-6:
            _err(path, jn, f"joint {jn.get('name')!r}: axis must be a unit vector")
        limits = tuple(jn.get("limits", (-math.inf, math.inf)))
        if len(limits) != 2 or not limits[0] < limits[1]:
            _err(path, jn, f"joint {jn.get('name')!r}: limits must be (lo, hi) with lo < hi")
        tau_max = float(jn.get("tau_max", math.inf))
        if tau_max <= 0.0:
            _err(path, jn, f"joint {jn.get('name')!r}: tau_max must be positive")
        body = _body_from(node, path)
        if body.name in name_to_idx:
            _err(path, node, f"duplicate link name {body.name!r}")
        joints.append(
            Joint(
                jn.get("name", f"joint_{len(joints)}"),
                name_to_idx[parent_name],
                axis / norm,
                _vec3(jn, "origin", path, default=[0, 0, 0]),
                (float(limits[0]), float(limits[1])),
                tau_max,
            )
        )
        name_to_idx[body.name] = len(bodies)
        bodies.append(body)

    wheels = []
    for node in doc.get("wheels", []):
        link = node.get("link")
        if link not in name_to_idx:
            _err(path, node, f"wheel references unknown link {link!r}")
        radius = float(node.get("radius", 0.0))
        if radius <= 0.0:
            _err(path, node, "wheel radius must be positive")
        body_idx = name_to_idx[link]
        wheels.append(Wheel(body_idx, body_idx - 1, radius))

    gravity = float(doc.get("gravity", 9.81))
    if gravity <= 0.0:
        raise ModelError(f"{path}: gravity must be positive")
    return RobotModel(bodies, joints, wheels, gravity)


def default_model() -> RobotModel:
    """The packaged 10-joint wheeled biped (30 kg, 0.08 m wheels)."""
    ref = resources.files("rollstep") / "models" / "wheeled_biped.yaml"
    with resources.as_file(ref) as p:
        return load_model(p)
