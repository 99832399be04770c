"""Reduced-order models and the contact-phase state machine.

The sagittal rolling template keeps the CoM and the wheel-line (ZMP) as a
four-state linear system whose input is the ZMP acceleration. The frontal
stepping template is the point-pivot pendulum whose transition over a step
is analytic in hyperbolic functions. The schedule alternates single-support
phases every ``T_s`` for walking and hybrid gaits and stays in double
support while rolling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

LS, RS, DS = "LS", "RS", "DS"
_MODES = ("rolling", "walking", "hybrid")


@dataclass(frozen=True)
class PendulumParams:
    """Constant-height pendulum: z_c in meters, g in m/s^2."""

    z_c: float
    g: float = 9.81

    def __post_init__(self):
        if self.z_c <= 0.0:
            raise ValueError("z_c must be positive")
        if self.g <= 0.0:
            raise ValueError("g must be positive")

    @property
    def omega(self) -> float:
        return math.sqrt(self.g / self.z_c)


def cart_lipm_matrices(params: PendulumParams):
    """State matrices for x = [x_c, xd_c, x_p, xd_p], input = ZMP acceleration."""
    w2 = params.omega**2
    A = np.array(
        [
            [0.0, 1.0, 0.0, 0.0],
            [w2, 0.0, -w2, 0.0],
            [0.0, 0.0, 0.0, 1.0],
            [0.0, 0.0, 0.0, 0.0],
        ]
    )
    B = np.array([0.0, 0.0, 0.0, 1.0])
    return A, B


def lipm_transition(params: PendulumParams, t: float):
    """Analytic transition (A_y, B_y) of the point-pivot pendulum over time t.

    y(t) = A_y(t) y0 + B_y(t) y_p, where y = [position, velocity] and y_p is
    the fixed pivot. Valid for negative t as well (cosh even, sinh odd).
    """
    w = params.omega
    c, s = math.cosh(w * t), math.sinh(w * t)
    A = np.array([[c, s / w], [w * s, c]])
    B = np.array([1.0 - c, -w * s])
    return A, B


def lipm_propagate(y0, y_p: float, t: float, params: PendulumParams):
    A, B = lipm_transition(params, t)
    return A @ np.asarray(y0, dtype=float) + B * y_p


def cart_lipm_propagate(params: PendulumParams, x, u: float, tau: float) -> np.ndarray:
    """Exact propagation of the rolling template under constant input.

    The wheel line integrates as a double integrator; the CoM-to-wheel offset
    obeys a driven pendulum with the closed-form hyperbolic solution.
    """
    x = np.asarray(x, dtype=float)
    w = params.omega
    xp = x[2] + x[3] * tau + 0.5 * u * tau**2
    xpd = x[3] + u * tau
    c = u / w**2
    eta0 = (x[0] - x[2]) - c
    etad0 = x[1] - x[3]
    ch, sh = math.cosh(w * tau), math.sinh(w * tau)
    xi = c + eta0 * ch + etad0 / w * sh
    xid = w * eta0 * sh + etad0 * ch
    return np.array([xp + xi, xpd + xid, xp, xpd])


@dataclass(frozen=True)
class ContactPhase:
    kind: str  # LS | RS | DS
    t_start: float
    duration: float  # math.inf for open-ended double support

    def __post_init__(self):
        if self.kind not in (LS, RS, DS):
            raise ValueError(f"unknown phase kind {self.kind!r}")
        if not self.duration > 0.0:
            raise ValueError("phase duration must be positive")

    @property
    def t_end(self) -> float:
        return self.t_start + self.duration


@dataclass(frozen=True)
class ContactSchedule:
    """Support-phase timeline for one locomotion mode.

    Rolling is a single open-ended DS phase. Walking and hybrid alternate
    LS/RS every ``T_s`` with an instantaneous switch; an optional ``lead_in_ds``
    models the brief double-support dwell inserted at mode transitions.
    """

    mode: str
    T_s: float = 0.5
    first_support: str = LS
    t_start: float = 0.0
    lead_in_ds: float = 0.0

    def __post_init__(self):
        if self.mode not in _MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode != "rolling" and not self.T_s > 0.0:
            raise ValueError("T_s must be positive")
        if self.first_support not in (LS, RS):
            raise ValueError("first_support must be LS or RS")
        if self.lead_in_ds < 0.0:
            raise ValueError("lead_in_ds must be non-negative")

    def phases(self, until: float) -> list[ContactPhase]:
        """Explicit phase list covering [t_start, until]."""
        if self.mode == "rolling":
            return [ContactPhase(DS, self.t_start, math.inf)]
        out = []
        t = self.t_start
        if self.lead_in_ds > 0.0:
            out.append(ContactPhase(DS, t, self.lead_in_ds))
            t += self.lead_in_ds
        k = 0
        while t <= until:
            kind = self.first_support if k % 2 == 0 else _other(self.first_support)
            out.append(ContactPhase(kind, t, self.T_s))
            t += self.T_s
            k += 1
        return out


def _other(kind: str) -> str:
    return RS if kind == LS else LS


def schedule_advance(schedule: ContactSchedule, t: float):
    """Active phase at time t and the remaining duration T0 of that phase.

    Phase boundaries belong to the incoming phase (instantaneous switch).
    """
    rel = t - schedule.t_start
    if rel < 0.0:
        raise ValueError(f"t={t} precedes schedule start {schedule.t_start}")
    if schedule.mode == "rolling":
        return ContactPhase(DS, schedule.t_start, math.inf), math.inf
    if rel < schedule.lead_in_ds:
        return (
            ContactPhase(DS, schedule.t_start, schedule.lead_in_ds),
            schedule.lead_in_ds - rel,
        )
    rel -= schedule.lead_in_ds
    k = int(math.floor(rel / schedule.T_s + 1e-12))
    kind = schedule.first_support if k % 2 == 0 else _other(schedule.first_support)
    t0 = schedule.t_start + schedule.lead_in_ds + k * schedule.T_s
    phase = ContactPhase(kind, t0, schedule.T_s)
    return phase, phase.t_end - t
