"""Receding-horizon motion planner.

Sagittal side: velocity tracking of the rolling template, either as a pure
Riccati state feedback or as a finite-horizon QP with kinematic and input
limits. Frontal side: footstep optimization over the analytic step-to-step
recursion of the point-pivot pendulum, with hard step-length bounds, plus
trajectory reconstruction between touchdowns and swing-wheel trajectories.

The feedback reference state is anchored to the measured wheel line each
tick (CoM over the support point, both moving at the commanded velocity);
that keeps the control law translation invariant and the steady-state
velocity error exactly zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .numerics import LtiSystem, QpProblem, solve_care, solve_qp
from .templates import PendulumParams, cart_lipm_matrices, lipm_transition

__all__ = [
    "SagittalLqr",
    "synthesize_sagittal_lqr",
    "sagittal_reference",
    "rolling_control",
    "RollingMpc",
    "RollingMpcResult",
    "FootstepProblem",
    "FootstepPlan",
    "optimize_footsteps",
    "FrontalTrajectory",
    "reconstruct_com_trajectory",
    "SwingTrajectory",
    "swing_trajectory",
]


@dataclass(frozen=True)
class SagittalLqr:
    """Riccati gain for the rolling template; K stabilizes A - B K."""

    params: PendulumParams
    Q: np.ndarray
    R: float
    K: np.ndarray  # (4,)
    P: np.ndarray  # (4, 4)


def synthesize_sagittal_lqr(params: PendulumParams, Q, R) -> SagittalLqr:
    """Solve the rolling-template Riccati problem and return the gain.

    Q may be a length-4 diagonal or a full 4x4 PSD matrix; R is a positive
    scalar. A cost that leaves the template's unstable modes unpenalized is
    a synthesis-time error (the Riccati solve reports it).
    """
    Q = np.asarray(Q, dtype=float)
    if Q.ndim == 1:
        Q = np.diag(Q)
    R = float(R)
    if R <= 0.0:
        raise ValueError("R must be positive")
    A, B = cart_lipm_matrices(params)
    P, K = solve_care(LtiSystem(A, B), Q, [[R]])
    return SagittalLqr(params, Q, R, K.ravel(), P)


def sagittal_reference(x_hat, xd_star: float) -> np.ndarray:
    """Reference state: CoM over the measured wheel line at the commanded speed."""
    x_hat = np.asarray(x_hat, dtype=float)
    return np.array([x_hat[2], xd_star, x_hat[2], xd_star])


def rolling_control(lqr: SagittalLqr, x_hat, xd_star: float) -> float:
    """ZMP-acceleration command u = -K (x_hat - x_ref)."""
    x_hat = np.asarray(x_hat, dtype=float)
    return float(-lqr.K @ (x_hat - sagittal_reference(x_hat, xd_star)))


@dataclass
class RollingMpcResult:
    u: float
    status: str
    fallback: bool = False
    inputs: np.ndarray | None = None  # planned input sequence u_0 .. u_{K-1}
    predicted: np.ndarray | None = None  # (K+1, 4) predicted error states


class RollingMpc:
    """Finite-horizon QP form of the rolling controller.

    Exact zero-order-hold discretization of both the dynamics and the
    quadratic cost; terminal weight from the discrete Riccati fixed point,
    so with inactive constraints the first input equals the sampled
    infinite-horizon feedback. Box limits on the input and on the
    CoM-to-wheel offset are enforced over the horizon; if they make the
    problem infeasible the solve falls back to the unconstrained feedback
    and flags it.
    """

    def __init__(
        self,
        lqr: SagittalLqr,
        horizon: int = 40,
        dt: float = 0.01,
        L_kin: float | None = None,
        u_max: float | None = None,
        terminal: str = "riccati",
    ):
        if horizon < 1:
            raise ValueError("horizon must be >= 1")
        if dt <= 0.0:
            raise ValueError("dt must be positive")
        if L_kin is not None and L_kin <= 0.0:
            raise ValueError("L_kin must be positive")
        if u_max is not None and u_max <= 0.0:
            raise ValueError("u_max must be positive")
        self.lqr = lqr
        self.horizon = horizon
        self.dt = dt
        self.L_kin = L_kin
        self.u_max = u_max

        A, B = cart_lipm_matrices(lqr.params)
        self.Ad, self.Bd = _zoh(A, B.reshape(4, 1), dt)
        self.Qd, self.Md, self.Rd = _sampled_cost(A, B.reshape(4, 1), lqr.Q, lqr.R, dt)
        self.Pt, self.Kd = _riccati_fixed_point(self.Ad, self.Bd, self.Qd, self.Md, self.Rd)
        if terminal == "stage":
            self.Pt = self.Qd
        elif terminal != "riccati":
            raise ValueError(f"unknown terminal weight {terminal!r}")
        self._build_condensed()

    def _build_condensed(self):
        # prestabilized condensing: the decision is a correction v on top of
        # the sampled feedback, so predictions use the stable closed loop and
        # stay well conditioned at long horizons
        K, n = self.horizon, 4
        Kd = self.Kd.reshape(1, 4)
        Acl = self.Ad - self.Bd @ Kd
        Qt = self.Qd - self.Md @ Kd - Kd.T @ self.Md.T + self.Rd * Kd.T @ Kd
        Mt = self.Md - self.Rd * Kd.T
        Sx = np.zeros(((K + 1) * n, n))
        Sv = np.zeros(((K + 1) * n, K))
        Sx[0:n] = np.eye(n)
        for k in range(1, K + 1):
            Sx[k * n : (k + 1) * n] = Acl @ Sx[(k - 1) * n : k * n]
            Sv[k * n : (k + 1) * n] = Acl @ Sv[(k - 1) * n : k * n]
            Sv[k * n : (k + 1) * n, k - 1 : k] = self.Bd
        Qbar = np.zeros(((K + 1) * n, (K + 1) * n))
        Mbar = np.zeros(((K + 1) * n, K))
        for k in range(K):
            Qbar[k * n : (k + 1) * n, k * n : (k + 1) * n] = Qt
            Mbar[k * n : (k + 1) * n, k : k + 1] = Mt
        Qbar[K * n :, K * n :] = self.Pt
        Rbar = self.Rd * np.eye(K)
        self._H = 2.0 * (Sv.T @ Qbar @ Sv + Sv.T @ Mbar + Mbar.T @ Sv + Rbar)
        self._H = 0.5 * (self._H + self._H.T)
        self._Gx = 2.0 * (Qbar @ Sv + Mbar).T @ Sx
        self._Sx, self._Sv = Sx, Sv

    def solve(self, x_hat, xd_star: float) -> RollingMpcResult:
        x_hat = np.asarray(x_hat, dtype=float)
        e0 = x_hat - sagittal_reference(x_hat, xd_star)
        g = self._Gx @ e0
        K, n = self.horizon, 4
        # u_k = -Kd e_k + v_k expressed affinely in the corrections v
        Umap = np.zeros((K, K))
        uoff = np.zeros(K)
        for k in range(K):
            Umap[k] = -self.Kd @ self._Sv[k * n : (k + 1) * n]
            Umap[k, k] += 1.0
            uoff[k] = -self.Kd @ (self._Sx[k * n : (k + 1) * n] @ e0)
        Cin, din = [], []
        if self.u_max is not None:
            Cin.extend([Umap, -Umap])
            din.extend([self.u_max - uoff, self.u_max + uoff])
        if self.L_kin is not None:
            F = np.array([1.0, 0.0, -1.0, 0.0])
            rows = np.stack([F @ self._Sv[k * n : (k + 1) * n] for k in range(1, K + 1)])
            offs = np.array([F @ self._Sx[k * n : (k + 1) * n] @ e0 for k in range(1, K + 1)])
            Cin.extend([rows, -rows])
            din.extend([self.L_kin - offs, self.L_kin + offs])
        prob = QpProblem(
            self._H,
            g,
            Cin=np.vstack(Cin) if Cin else None,
            din=np.concatenate(din) if din else None,
        )
        res = solve_qp(prob)
        if not res.ok:
            return RollingMpcResult(
                rolling_control(self.lqr, x_hat, xd_star), res.status, fallback=True
            )
        v = res.x
        u_seq = Umap @ v + uoff
        predicted = (self._Sx @ e0 + self._Sv @ v).reshape(K + 1, n)
        return RollingMpcResult(float(u_seq[0]), "optimal", inputs=u_seq, predicted=predicted)


def _zoh(A, B, dt):
    n, m = A.shape[0], B.shape[1]
    M = np.zeros((n + m, n + m))
    M[:n, :n] = A
    M[:n, n:] = B
    E = scipy.linalg.expm(M * dt)
    return E[:n, :n], E[:n, n:]


def _sampled_cost(A, B, Q, R, dt, nodes: int = 12):
    """Exact integral of x'Qx + u'Ru over one hold interval (Gauss-Legendre)."""
    n = A.shape[0]
    xs, ws = np.polynomial.legendre.leggauss(nodes)
    s = 0.5 * dt * (xs + 1.0)
    w = 0.5 * dt * ws
    Qd = np.zeros((n, n))
    Md = np.zeros((n, 1))
    Rq = 0.0
    for si, wi in zip(s, w):
        Phi, Gam = _zoh(A, B, si)
        Qd += wi * Phi.T @ Q @ Phi
        Md += wi * Phi.T @ Q @ Gam
        Rq += wi * (Gam.T @ Q @ Gam).item()
    Rd = float(R) * dt + Rq
    return 0.5 * (Qd + Qd.T), Md, Rd


def _riccati_fixed_point(Ad, Bd, Qd, Md, Rd):
    """Infinite-horizon weight of the sampled problem (with cost cross term)."""
    P = scipy.linalg.solve_discrete_are(Ad, Bd, Qd, np.array([[Rd]]), s=Md)
    BtP = Bd.T @ P
    S = Rd + (BtP @ Bd).item()
    Kd = ((BtP @ Ad + Md.T) / S).ravel()
    return P, Kd


# ---------------------------------------------------------------------------
# frontal footstep optimization


@dataclass
class FootstepProblem:
    """One receding-horizon footstep problem.

    The lateral axis alternates the desired step length s*(-1)^i*d around
    the inter-feet clearance d with hard bounds 0 < d_min <= d <= d_max.
    Walking composes a second instance on the forward axis (``sagittal``
    constructor) where the desired advance per step is v_star*T_s and the
    bounds are the symmetric box |step| <= d_max.
    """

    params: PendulumParams
    y0_hat: np.ndarray  # estimated CoM [pos, vel]
    yp0_hat: float  # current support position
    T0: float  # remaining time in the current step
    T_s: float  # step duration
    N: int  # horizon steps
    v_star: float  # reference CoM velocity
    d: float  # desired inter-feet clearance
    s: int  # +1 left support, -1 right support
    d_min: float
    d_max: float
    Q: float = 10.0
    R: float = 1.0
    axis: str = "lateral"

    def __post_init__(self):
        self.y0_hat = np.asarray(self.y0_hat, dtype=float).ravel()
        if self.y0_hat.shape != (2,):
            raise ValueError("y0_hat must be a [position, velocity] pair")
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if not (0.0 < self.T0 <= self.T_s + 1e-12):
            raise ValueError("T0 must lie in (0, T_s]")
        if self.s not in (+1, -1):
            raise ValueError("s must be +1 or -1")
        if self.axis == "lateral":
            if not (0.0 < self.d_min <= self.d <= self.d_max):
                raise ValueError("need 0 < d_min <= d <= d_max")
            if self.d_min >= self.d_max:
                raise ValueError("infeasible bounds: d_min >= d_max")
        elif self.axis == "sagittal":
            if self.d_max <= 0.0:
                raise ValueError("d_max must be positive")
        else:
            raise ValueError(f"unknown axis {self.axis!r}")

    @classmethod
    def sagittal(cls, params, y0_hat, yp0_hat, T0, T_s, N, v_star, d_max, Q=10.0, R=1.0):
        return cls(
            params, y0_hat, yp0_hat, T0, T_s, N, v_star,
            d=0.0, s=+1, d_min=0.0, d_max=d_max, Q=Q, R=R, axis="sagittal",
        )

    def step_targets(self) -> np.ndarray:
        """Desired step lengths, one per horizon step (index i = 1..N)."""
        if self.axis == "lateral":
            return np.array([self.s * (-1) ** i * self.d for i in range(1, self.N + 1)])
        return np.full(self.N, self.v_star * self.T_s)

    def step_bounds(self):
        """(lo, hi) arrays so that lo_i <= step_i <= hi_i encodes the hard bounds."""
        lo = np.empty(self.N)
        hi = np.empty(self.N)
        for i in range(1, self.N + 1):
            if self.axis == "lateral":
                if self.s * (-1) ** i > 0:
                    lo[i - 1], hi[i - 1] = self.d_min, self.d_max
                else:
                    lo[i - 1], hi[i - 1] = -self.d_max, -self.d_min
            else:
                lo[i - 1], hi[i - 1] = -self.d_max, self.d_max
        return lo, hi


@dataclass
class FootstepPlan:
    y_p: np.ndarray  # optimized step positions, length N
    com_knots: np.ndarray  # (N+1, 2) CoM states at touchdowns, y_1 ... y_{N+1}
    objective: float
    bound_margin: float  # smallest distance of any step length to its hard bound

    @property
    def first_step(self) -> float:
        return float(self.y_p[0])


# hard bounds are strict in the contract; shrink by this margin inside the QP
_STRICT_MARGIN = 1e-9


def _step_chain(prob: FootstepProblem):
    """Affine maps: touchdown states and velocities as functions of the steps."""
    A0, B0 = lipm_transition(prob.params, prob.T0)
    y1 = A0 @ prob.y0_hat + B0 * prob.yp0_hat
    As, Bs = lipm_transition(prob.params, prob.T_s)
    N = prob.N
    # y_{i+1} = As^i y1 + sum_j As^(i-1-j) Bs p_j  (affine in the steps p)
    consts = np.zeros((N, 2))
    coeffs = np.zeros((N, 2, N))
    acc_const = y1.copy()
    acc_coeff = np.zeros((2, N))
    for i in range(1, N + 1):
        acc_const = As @ acc_const
        acc_coeff = As @ acc_coeff
        acc_coeff[:, i - 1] += Bs
        consts[i - 1] = acc_const
        coeffs[i - 1] = acc_coeff
    return y1, consts, coeffs


def optimize_footsteps(prob: FootstepProblem) -> FootstepPlan:
    """Minimize velocity tracking + step-length similarity over future steps.

    The first touchdown state is fixed by the current support and remaining
    step time; only the N future placements are decided. Hard step-length
    bounds are enforced strictly.
    """
    N = prob.N
    y1, consts, coeffs = _step_chain(prob)
    Gv = coeffs[:, 1, :]  # velocity rows of y_2 .. y_{N+1}
    cv = consts[:, 1] - prob.v_star

    D = np.eye(N) - np.eye(N, k=-1)  # step differences, p_0 folded into f
    f = np.zeros(N)
    f[0] = -prob.yp0_hat
    targets = prob.step_targets()

    H = 2.0 * (prob.Q * Gv.T @ Gv + prob.R * D.T @ D)
    g = 2.0 * (prob.Q * Gv.T @ cv + prob.R * D.T @ (f - targets))

    lo, hi = prob.step_bounds()
    Cin = np.vstack([D, -D])
    din = np.concatenate([hi - _STRICT_MARGIN - f, -(lo + _STRICT_MARGIN) + f])
    res = solve_qp(QpProblem(H, g, Cin=Cin, din=din))
    if not res.ok:
        raise RuntimeError(f"footstep QP failed: {res.status}")
    p = res.x
    knots = np.vstack([y1, consts + np.einsum("ikj,j->ik", coeffs, p)])
    steps = D @ p + f
    margin = float(min((steps - lo).min(), (hi - steps).min()))
    obj = float(prob.Q * np.sum((Gv @ p + cv) ** 2) + prob.R * np.sum((steps - targets) ** 2))
    return FootstepPlan(p, knots, obj, margin)


def footstep_objective(prob: FootstepProblem, p) -> float:
    """Cost of an arbitrary step sequence (used by oracles and tests)."""
    p = np.asarray(p, dtype=float)
    _, consts, coeffs = _step_chain(prob)
    v = consts[:, 1] + coeffs[:, 1, :] @ p - prob.v_star
    steps = np.diff(np.concatenate([[prob.yp0_hat], p]))
    return float(prob.Q * np.sum(v**2) + prob.R * np.sum((steps - prob.step_targets()) ** 2))


@dataclass
class FrontalTrajectory:
    """Piecewise-analytic CoM trajectory implied by a footstep plan."""

    params: PendulumParams
    seg_t0: np.ndarray  # segment start times
    seg_y0: np.ndarray  # (n_seg, 2) segment initial states
    seg_pivot: np.ndarray  # pivot per segment
    t_end: float

    def state_at(self, t: float) -> np.ndarray:
        t = min(max(t, 0.0), self.t_end)
        i = int(np.searchsorted(self.seg_t0, t, side="right") - 1)
        i = max(i, 0)
        A, B = lipm_transition(self.params, t - self.seg_t0[i])
        return A @ self.seg_y0[i] + B * self.seg_pivot[i]

    def pivot_at(self, t: float) -> float:
        t = min(max(t, 0.0), self.t_end)
        i = max(int(np.searchsorted(self.seg_t0, t, side="right") - 1), 0)
        return float(self.seg_pivot[i])

    def sample(self, sample_dt: float):
        ts = np.arange(0.0, self.t_end + 1e-12, sample_dt)
        ys = np.array([self.state_at(float(t)) for t in ts])
        return ts, ys


def reconstruct_com_trajectory(plan: FootstepPlan, prob: FootstepProblem) -> FrontalTrajectory:
    """Analytic CoM propagation across the planned pivots.

    Continuous in position and velocity at every switch because each segment
    starts from the previous segment's final state.
    """
    t0 = [0.0]
    y0 = [prob.y0_hat]
    piv = [prob.yp0_hat]
    t = prob.T0
    for i in range(prob.N):
        t0.append(t)
        y0.append(plan.com_knots[i])
        piv.append(plan.y_p[i])
        t += prob.T_s
    return FrontalTrajectory(
        prob.params, np.asarray(t0), np.vstack(y0), np.asarray(piv, dtype=float), t
    )


# ---------------------------------------------------------------------------
# swing-wheel trajectories


def _quintic(p0, v0, a0, p1, v1, a1, T):
    """Quintic polynomial coefficients matching full boundary states."""
    T2, T3, T4, T5 = T**2, T**3, T**4, T**5
    M = np.array(
        [
            [1, 0, 0, 0, 0, 0],
            [0, 1, 0, 0, 0, 0],
            [0, 0, 2, 0, 0, 0],
            [1, T, T2, T3, T4, T5],
            [0, 1, 2 * T, 3 * T2, 4 * T3, 5 * T4],
            [0, 0, 2, 6 * T, 12 * T2, 20 * T3],
        ]
    )
    rhs = np.stack([np.atleast_1d(v) for v in (p0, v0, a0, p1, v1, a1)])
    return np.linalg.solve(M, rhs)


def _quintic_eval(coef, t):
    powers = np.array([1.0, t, t**2, t**3, t**4, t**5])
    dpow = np.array([0.0, 1.0, 2 * t, 3 * t**2, 4 * t**3, 5 * t**4])
    ddpow = np.array([0.0, 0.0, 2.0, 6 * t, 12 * t**2, 20 * t**3])
    return powers @ coef, dpow @ coef, ddpow @ coef


@dataclass
class SwingTrajectory:
    """Swing wheel-center trajectory: quintic in the plane, two-piece quintic
    vertically peaking at ``apex`` above the lift-off height at mid-phase.
    Zero velocity and acceleration at both ends (unless built mid-swing by
    :meth:`retarget`, which matches the current state instead)."""

    start: np.ndarray
    target: np.ndarray
    duration: float
    apex: float
    apex_z: float = None  # absolute peak height, anchored to the lift-off point
    descend_at: float = None  # phase time when the descent begins
    _xy: np.ndarray = field(repr=False, default=None)
    _zsegs: list = field(repr=False, default=None)

    def __post_init__(self):
        if self.duration <= 0.0:
            raise ValueError("duration must be positive")
        if self.apex < 0.0:
            raise ValueError("apex must be non-negative")
        self.start = np.asarray(self.start, dtype=float).ravel()
        self.target = np.asarray(self.target, dtype=float).ravel()
        if self.apex_z is None:
            self.apex_z = float(self.start[2] + self.apex)
        if self.descend_at is None:
            self.descend_at = self.duration / 2
        if self._xy is None:
            self._build(np.zeros(2), np.zeros(2), 0.0, 0.0)

    def _build(self, v0_xy, a0_xy, vz0, az0):
        T = self.duration
        self._xy = _quintic(self.start[:2], v0_xy, a0_xy, self.target[:2], np.zeros(2), np.zeros(2), T)
        apex_z = self.apex_z
        t_up = min(max(self.descend_at, 0.0), T)
        if self.apex > 0.0 and apex_z > max(self.start[2], self.target[2]) and 0.0 < t_up < T:
            up = _quintic(self.start[2], vz0, az0, apex_z, 0.0, 0.0, t_up)
            dn = _quintic(apex_z, 0.0, 0.0, self.target[2], 0.0, 0.0, T - t_up)
            self._zsegs = [(0.0, t_up, up), (t_up, T - t_up, dn)]
        else:
            self._zsegs = [(0.0, T, _quintic(self.start[2], vz0, az0, self.target[2], 0.0, 0.0, T))]

    def evaluate(self, t: float):
        """Position, velocity, acceleration at phase time t (clamped to the phase)."""
        t = min(max(t, 0.0), self.duration)
        p_xy, v_xy, a_xy = _quintic_eval(self._xy, t)
        t0, Tseg, coef = self._zsegs[-1]
        for seg in self._zsegs:
            if t <= seg[0] + seg[1]:
                t0, Tseg, coef = seg
                break
        pz, vz, az = _quintic_eval(coef, min(max(t - t0, 0.0), Tseg))
        pos = np.array([p_xy[0], p_xy[1], float(np.atleast_1d(pz)[0])])
        vel = np.array([v_xy[0], v_xy[1], float(np.atleast_1d(vz)[0])])
        acc = np.array([a_xy[0], a_xy[1], float(np.atleast_1d(az)[0])])
        return pos, vel, acc

    def retarget(self, t_now: float, new_target) -> "SwingTrajectory":
        """New trajectory over the remaining phase, continuous in position,
        velocity and acceleration at the hand-over instant."""
        t_now = min(max(t_now, 0.0), self.duration)
        remaining = self.duration - t_now
        if remaining <= 1e-9:
            return self
        pos, vel, acc = self.evaluate(t_now)
        new = SwingTrajectory.__new__(SwingTrajectory)
        new.start = pos
        new.target = np.asarray(new_target, dtype=float).ravel()
        new.duration = remaining
        new.apex = self.apex
        new.apex_z = self.apex_z  # the peak stays anchored to the lift-off height
        new.descend_at = max(self.descend_at - t_now, 0.0)  # phase clock keeps running
        new._xy = _quintic(pos[:2], vel[:2], acc[:2], new.target[:2], np.zeros(2), np.zeros(2), remaining)
        if new.descend_at > 0.0 and len(self._zsegs) == 2:
            up = _quintic(pos[2], vel[2], acc[2], self.apex_z, 0.0, 0.0, new.descend_at)
            dn = _quintic(self.apex_z, 0.0, 0.0, new.target[2], 0.0, 0.0, remaining - new.descend_at)
            new._zsegs = [(0.0, new.descend_at, up), (new.descend_at, remaining - new.descend_at, dn)]
        else:
            new._zsegs = [(0.0, remaining, _quintic(pos[2], vel[2], acc[2], new.target[2], 0.0, 0.0, remaining))]
        return new


def swing_trajectory(start, target, duration: float, apex: float) -> SwingTrajectory:
    return SwingTrajectory(np.asarray(start, float), np.asarray(target, float), duration, apex)
