"""Dense numerical kernels shared by the planner and the whole-body controller.

Three solvers live here:

* :func:`solve_care` -- continuous algebraic Riccati equation via the
  Hamiltonian invariant-subspace method with a Kleinman-Newton polish.
* :func:`solve_qp` -- small dense convex QP via a primal active-set method
  (self-bootstrapping phase 1, Tikhonov-regularized Hessian).
* :func:`solve_hierarchy` -- strict-priority cascade of least-squares
  levels, each optimized in the nullspace of the levels above it, with
  inequality rows accumulated downward as hard constraints.

Everything is a pure function of its inputs; no shared mutable state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

__all__ = [
    "CareError",
    "LtiSystem",
    "QpProblem",
    "QpResult",
    "PrioritizedTask",
    "HierarchyLevelReport",
    "HierarchyResult",
    "HierarchyInfeasibleError",
    "solve_care",
    "solve_qp",
    "solve_hierarchy",
    "kkt_residuals",
]

# Tikhonov term added to every QP Hessian; keeps the reduced problems
# strictly convex and realizes a (near) minimum-norm tie-break.
QP_REGULARIZATION = 1e-10
_FEAS_TOL = 1e-9


class CareError(RuntimeError):
    """Riccati solve failed (system not stabilizable or ill-conditioned)."""


class HierarchyInfeasibleError(RuntimeError):
    """The highest-priority level of a task cascade is infeasible."""


@dataclass(frozen=True)
class LtiSystem:
    """Continuous-time linear system dx/dt = A x + B u."""

    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B[:, None]
        if A.shape[0] != A.shape[1]:
            raise ValueError(f"A must be square, got {A.shape}")
        if B.shape[0] != A.shape[0]:
            raise ValueError(f"B rows {B.shape[0]} != state dim {A.shape[0]}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]


def solve_care(sys: LtiSystem, Q, R, newton_passes: int = 4):
    """Solve A'P + PA - PB R^-1 B'P + Q = 0 for the stabilizing P.

    Returns ``(P, K)`` with ``K = R^-1 B' P``; ``A - B K`` is Hurwitz.
    Raises :class:`CareError` when no stabilizing solution exists (the
    Hamiltonian has eigenvalues on the imaginary axis, or the closed loop
    fails the final residual/stability checks).
    """
    A, B = sys.A, sys.B
    n = sys.n
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    if Q.shape != (n, n):
        raise ValueError(f"Q must be {n}x{n}, got {Q.shape}")
    if R.shape != (sys.m, sys.m):
        raise ValueError(f"R must be {sys.m}x{sys.m}, got {R.shape}")

    Rinv_Bt = np.linalg.solve(R, B.T)
    G = B @ Rinv_Bt  # B R^-1 B'
    H = np.block([[A, -G], [-Q, -A.T]])

    T, U, sdim = scipy.linalg.schur(H, output="real", sort="lhp")
    if sdim != n:
        raise CareError(
            "no n-dimensional stable invariant subspace: system is not "
            "stabilizable or the Hamiltonian has imaginary-axis eigenvalues"
        )
    U11 = U[:n, :n]
    U21 = U[n:, :n]
    try:
        P = np.linalg.solve(U11.T, U21.T).T
    except np.linalg.LinAlgError as exc:
        raise CareError("singular subspace basis (ill-conditioned problem)") from exc
    P = 0.5 * (P + P.T)

    def residual(P):
        return A.T @ P + P @ A - P @ G @ P + Q

    best_P, best_res = P, np.abs(residual(P)).max()
    for _ in range(newton_passes):
        K = Rinv_Bt @ best_P
        Acl = A - B @ K
        rhs = -(Q + K.T @ R @ K)
        try:
            P_new = scipy.linalg.solve_continuous_lyapunov(Acl.T, rhs)
        except np.linalg.LinAlgError:
            break
        P_new = 0.5 * (P_new + P_new.T)
        res = np.abs(residual(P_new)).max()
        if not np.isfinite(res) or res >= best_res:
            break
        best_P, best_res = P_new, res

    P = best_P
    K = Rinv_Bt @ P
    scale = 1.0 + np.abs(Q).max() + np.abs(P @ G @ P).max()
    if best_res > 1e-6 * scale:
        raise CareError(f"Riccati residual {best_res:.3e} did not converge")
    eigs = np.linalg.eigvals(A - B @ K)
    if eigs.real.max() >= 0.0:
        raise CareError("closed loop is not Hurwitz (non-stabilizing solution)")
    return P, K


# ---------------------------------------------------------------------------
# quadratic programming


@dataclass
class QpProblem:
    """min 1/2 x'Hx + g'x  s.t.  Ceq x = deq,  Cin x <= din."""

    H: np.ndarray
    g: np.ndarray
    Ceq: np.ndarray | None = None
    deq: np.ndarray | None = None
    Cin: np.ndarray | None = None
    din: np.ndarray | None = None

    def __post_init__(self):
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        self.g = np.asarray(self.g, dtype=float).ravel()
        n = self.g.shape[0]
        if self.H.shape != (n, n):
            raise ValueError(f"H must be {n}x{n}, got {self.H.shape}")
        if np.abs(self.H - self.H.T).max() > 1e-8 * (1.0 + np.abs(self.H).max()):
            raise ValueError("H must be symmetric")
        self.Ceq, self.deq = _rows_or_empty(self.Ceq, self.deq, n, "eq")
        self.Cin, self.din = _rows_or_empty(self.Cin, self.din, n, "in")

    @property
    def n(self) -> int:
        return self.g.shape[0]

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.H @ x + self.g @ x)


def _rows_or_empty(C, d, n, tag):
    if C is None or (hasattr(C, "__len__") and len(C) == 0):
        return np.zeros((0, n)), np.zeros(0)
    C = np.atleast_2d(np.asarray(C, dtype=float))
    d = np.asarray(d, dtype=float).ravel()
    if C.shape[1] != n:
        raise ValueError(f"{tag} rows have {C.shape[1]} cols, expected {n}")
    if C.shape[0] != d.shape[0]:
        raise ValueError(f"{tag} row count mismatch: {C.shape[0]} vs {d.shape[0]}")
    return C, d


@dataclass
class QpResult:
    x: np.ndarray
    status: str  # "optimal" | "infeasible" | "max_iterations"
    iterations: int
    active_set: list[int] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


def _eqp_step(Hr, q, C):
    """min 1/2 p'Hr p + q'p s.t. C p = 0. Returns (p, multipliers)."""
    m, n = C.shape
    if m == 0:
        return np.linalg.solve(Hr, -q), np.zeros(0)
    KKT = np.block([[Hr, C.T], [C, np.zeros((m, m))]])
    rhs = np.concatenate([-q, np.zeros(m)])
    sol, *_ = np.linalg.lstsq(KKT, rhs, rcond=None)
    return sol[:n], sol[n:]


def _active_set_core(Hr, g, Ceq, Cin, din, x, W, max_iter):
    """Primal active-set iteration from a feasible x. Returns (x, W, status, iters)."""
    n = x.shape[0]
    at_eqp_optimum = False  # set after a full unblocked step: the next EQP step is zero
    for it in range(1, max_iter + 1):
        C_work = np.vstack([Ceq, Cin[W]]) if (Ceq.shape[0] or W) else np.zeros((0, n))
        q = Hr @ x + g
        p, mults = _eqp_step(Hr, q, C_work)
        # zero-step threshold scales with the iterate and the KKT magnitudes,
        # otherwise least-squares noise on stiff problems masquerades as a step
        scale = 1.0 + np.abs(x).max(initial=0.0) + 1e-6 * np.abs(mults).max(initial=0.0)
        if at_eqp_optimum or np.abs(p).max(initial=0.0) <= 1e-10 * scale:
            at_eqp_optimum = False
            mu = mults[Ceq.shape[0]:]
            if mu.size == 0 or mu.min() >= -1e-9:
                return x, W, "optimal", it
            W.pop(int(np.argmin(mu)))
            continue
        # step length limited by inactive inequalities with increasing residual
        alpha = 1.0
        blocking = -1
        if Cin.shape[0]:
            mask = np.ones(Cin.shape[0], dtype=bool)
            mask[W] = False
            Cp = Cin[mask] @ p
            idx = np.flatnonzero(mask)
            pos = Cp > 1e-13
            if np.any(pos):
                slack = din[idx[pos]] - Cin[idx[pos]] @ x
                ratios = slack / Cp[pos]
                j = int(np.argmin(ratios))
                if ratios[j] < alpha:
                    alpha = max(ratios[j], 0.0)
                    blocking = int(idx[pos][j])
        x = x + alpha * p
        if blocking >= 0:
            W.append(blocking)
        else:
            at_eqp_optimum = alpha == 1.0
    return x, W, "max_iterations", max_iter


def solve_qp(problem: QpProblem, x0=None, max_iter: int | None = None) -> QpResult:
    """Dense primal active-set QP solve.

    Statuses are explicit: ``infeasible`` (constraints admit no point) and
    ``max_iterations`` (best iterate returned) are never silent.
    """
    p = problem
    n = p.n
    Hr = p.H + QP_REGULARIZATION * np.eye(n)
    if max_iter is None:
        max_iter = 50 + 10 * p.Cin.shape[0]

    # feasible starting point
    x = None
    if x0 is not None:
        cand = np.asarray(x0, dtype=float).ravel()
        if cand.shape == (n,) and _is_feasible(p, cand):
            x = cand
    if x is None:
        if p.Ceq.shape[0]:
            x, *_ = np.linalg.lstsq(p.Ceq, p.deq, rcond=None)
            if np.abs(p.Ceq @ x - p.deq).max() > _FEAS_TOL * (1.0 + np.abs(p.deq).max()):
                return QpResult(x, "infeasible", 0)
        else:
            x = np.zeros(n)
        viol = p.Cin @ x - p.din
        if viol.size and viol.max() > _FEAS_TOL:
            x, feasible = _phase1(p, x, max_iter)
            if not feasible:
                return QpResult(x, "infeasible", 0)

    # start with an empty working set: rows added as blockers are always
    # linearly independent of the set, which rules out degenerate cycling
    x, W, status, iters = _active_set_core(Hr, p.g, p.Ceq, p.Cin, p.din, x, [], max_iter)
    if status == "optimal":
        x = _polish(p, Hr, x, W)
    return QpResult(x, status, iters, active_set=sorted(W))


def _polish(p: QpProblem, Hr, x, W):
    """Re-solve on the final active set to strip drift accumulated in phase 1."""
    Cact = np.vstack([p.Ceq, p.Cin[W]]) if (p.Ceq.shape[0] or W) else np.zeros((0, p.n))
    dact = np.concatenate([p.deq, p.din[W]])
    m = Cact.shape[0]
    if m == 0:
        return np.linalg.solve(Hr, -p.g)
    KKT = np.block([[Hr, Cact.T], [Cact, np.zeros((m, m))]])
    rhs = np.concatenate([-p.g, dact])
    sol, *_ = np.linalg.lstsq(KKT, rhs, rcond=None)
    x_pol = sol[: p.n]
    if p.Cin.shape[0] and (p.Cin @ x_pol - p.din).max() > _FEAS_TOL:
        return x  # polished point left the feasible set; keep the iterate
    return x_pol


def _is_feasible(p: QpProblem, x) -> bool:
    if p.Ceq.shape[0] and np.abs(p.Ceq @ x - p.deq).max() > _FEAS_TOL:
        return False
    if p.Cin.shape[0] and (p.Cin @ x - p.din).max() > _FEAS_TOL:
        return False
    return True


def _phase1(p: QpProblem, x_eq, max_iter):
    """Minimize squared slack on violated inequalities to find a feasible point.

    The x-block carries only the Tikhonov term, which biases the slack
    minimum away from zero when the feasible set sits at large x. A few
    proximal recenterings (regularize around the current iterate) remove
    that bias geometrically.
    """
    n, m = p.n, p.Cin.shape[0]
    H1 = np.zeros((n + m, n + m))
    H1[n:, n:] = np.eye(m)
    H1 += QP_REGULARIZATION * np.eye(n + m)
    Ceq1 = np.hstack([p.Ceq, np.zeros((p.Ceq.shape[0], m))])
    Cin1 = np.hstack([p.Cin, -np.eye(m)])
    x = np.asarray(x_eq, dtype=float)
    worst = (p.Cin @ x - p.din).max(initial=0.0)
    for _ in range(6):
        g1 = np.concatenate([-QP_REGULARIZATION * x, np.zeros(m)])
        s0 = np.maximum(p.Cin @ x - p.din, 0.0) + 1.0
        z = np.concatenate([x, s0])
        z, _, _, _ = _active_set_core(H1, g1, Ceq1, Cin1, p.din, z, [], 2 * max_iter)
        x = z[:n]
        new_worst = (p.Cin @ x - p.din).max(initial=0.0)
        if new_worst <= _FEAS_TOL:
            return x, True
        if new_worst > 0.5 * worst:
            break  # stalled: genuinely infeasible
        worst = new_worst
    return x, worst <= 1e-7


def kkt_residuals(problem: QpProblem, x):
    """(stationarity, primal feasibility, complementary slackness) at x.

    Multipliers are recovered by least squares over the active rows, so the
    check is independent of the solve path.
    """
    p = problem
    x = np.asarray(x, dtype=float)
    grad = p.H @ x + p.g
    act = np.flatnonzero(np.abs(p.Cin @ x - p.din) < 1e-9) if p.Cin.shape[0] else np.array([], dtype=int)
    Cact = np.vstack([p.Ceq, p.Cin[act]]) if (p.Ceq.shape[0] or act.size) else np.zeros((0, p.n))
    if Cact.shape[0]:
        mults, *_ = np.linalg.lstsq(Cact.T, -grad, rcond=None)
        mu = mults[p.Ceq.shape[0]:]
        mu = np.maximum(mu, 0.0)  # clip tiny negatives; stationarity check absorbs it
        stat = np.abs(grad + p.Ceq.T @ mults[: p.Ceq.shape[0]] + p.Cin[act].T @ mu).max(initial=0.0)
        comp = np.abs(mu * (p.Cin[act] @ x - p.din[act])).max(initial=0.0)
    else:
        stat = np.abs(grad).max(initial=0.0)
        comp = 0.0
    feas = 0.0
    if p.Ceq.shape[0]:
        feas = max(feas, np.abs(p.Ceq @ x - p.deq).max())
    if p.Cin.shape[0]:
        feas = max(feas, (p.Cin @ x - p.din).max(initial=0.0))
    return stat, feas, comp


# ---------------------------------------------------------------------------
# strict-priority cascade


@dataclass
class PrioritizedTask:
    """One priority level: weighted equality rows and weighted inequality rows.

    ``A x = b`` rows are satisfied in the least-squares sense with positive
    diagonal weights ``w_eq``; ``C x <= d`` rows are hard (weights scale the
    relaxation slack if the level must be relaxed). Priority 0 is highest.
    """

    priority: int
    A: np.ndarray | None = None
    b: np.ndarray | None = None
    w_eq: np.ndarray | None = None
    C: np.ndarray | None = None
    d: np.ndarray | None = None
    w_in: np.ndarray | None = None

    def normalized(self, n: int) -> "PrioritizedTask":
        A, b = _rows_or_empty(self.A, self.b, n, "eq")
        C, d = _rows_or_empty(self.C, self.d, n, "in")
        w_eq = _weights(self.w_eq, A.shape[0], "w_eq")
        w_in = _weights(self.w_in, C.shape[0], "w_in")
        if self.priority < 0:
            raise ValueError("priority must be a non-negative integer")
        return PrioritizedTask(self.priority, A, b, w_eq, C, d, w_in)


def _weights(w, m, tag):
    if w is None:
        return np.ones(m)
    w = np.asarray(w, dtype=float).ravel()
    if w.shape[0] != m:
        raise ValueError(f"{tag} length {w.shape[0]} != row count {m}")
    if m and w.min() <= 0.0:
        raise ValueError(f"{tag} must be strictly positive")
    return w


@dataclass
class HierarchyLevelReport:
    priority: int
    residual: float
    n_eq: int
    n_in: int
    relaxed: bool = False
    slack: float = 0.0


@dataclass
class HierarchyResult:
    x: np.ndarray
    levels: list[HierarchyLevelReport]

    @property
    def relaxed_levels(self) -> list[int]:
        return [r.priority for r in self.levels if r.relaxed]


def _nullspace(A, rcond=1e-10):
    if A.shape[0] == 0:
        return np.eye(A.shape[1])
    u, s, vt = np.linalg.svd(A, full_matrices=True)
    tol = rcond * (s[0] if s.size else 1.0)
    rank = int(np.sum(s > tol))
    return vt[rank:].T


def solve_hierarchy(tasks: list[PrioritizedTask], n: int | None = None) -> HierarchyResult:
    """Solve a cascade of prioritized least-squares levels.

    Each level minimizes its weighted equality residual inside the nullspace
    of all higher-priority equality rows, subject to every inequality row
    accumulated so far. Relaxation policy for an infeasible level p > 0:
    minimize the w_in-weighted squared violation of that level's own
    inequality rows (inherited rows stay hard), shift the offending bounds by
    the optimal slack, and continue; the shifted rows are inherited downward.
    Infeasibility at the highest level raises.
    """
    if not tasks:
        raise ValueError("at least one task level is required")
    if n is None:
        n = _infer_dim(tasks)
    tasks = sorted((t.normalized(n) for t in tasks), key=lambda t: t.priority)

    x = np.zeros(n)
    Z = np.eye(n)
    C_acc = np.zeros((0, n))
    d_acc = np.zeros(0)
    reports: list[HierarchyLevelReport] = []

    for order, task in enumerate(tasks):
        Aw = task.w_eq[:, None] * task.A
        bw = task.w_eq * task.b
        C_lvl = task.w_in[:, None] * task.C
        d_lvl = task.w_in * task.d
        report = HierarchyLevelReport(task.priority, 0.0, task.A.shape[0], task.C.shape[0])

        if Z.shape[1] == 0:
            # no freedom left; only record residual / violation status
            if C_lvl.shape[0]:
                slack = float((C_lvl @ x - d_lvl).max(initial=0.0))
                if slack > _FEAS_TOL:
                    report.relaxed, report.slack = True, slack
            report.residual = float(np.linalg.norm(Aw @ x - bw)) if Aw.shape[0] else 0.0
            reports.append(report)
            continue

        At = Aw @ Z
        bt = bw - Aw @ x
        C_all = np.vstack([C_acc, C_lvl])
        d_all = np.concatenate([d_acc, d_lvl])
        Ct = C_all @ Z
        dt = d_all - C_all @ x

        u = None
        if At.shape[0]:
            u_ls, *_ = np.linalg.lstsq(At, bt, rcond=None)
            if Ct.shape[0] == 0 or (Ct @ u_ls - dt).max() <= _FEAS_TOL:
                u = u_ls
        elif Ct.shape[0] == 0:
            u = np.zeros(Z.shape[1])

        if u is None:
            H = At.T @ At if At.shape[0] else np.zeros((Z.shape[1], Z.shape[1]))
            g = -(At.T @ bt) if At.shape[0] else np.zeros(Z.shape[1])
            if not At.shape[0]:
                H = np.eye(Z.shape[1])  # pure feasibility step: stay minimal
            res = solve_qp(QpProblem(H, g, Cin=Ct, din=dt))
            if res.status == "infeasible":
                if order == 0:
                    raise HierarchyInfeasibleError(
                        f"priority {task.priority} constraints are infeasible"
                    )
                d_lvl, slack = _relax_level(Z, x, C_acc, d_acc, C_lvl, d_lvl)
                report.relaxed, report.slack = True, slack
                dt = np.concatenate([d_acc, d_lvl]) - C_all @ x
                res = solve_qp(QpProblem(H, g, Cin=Ct, din=dt))
            u = res.x

        x = x + Z @ u
        if At.shape[0]:
            Z = Z @ _nullspace(At)
        C_acc = np.vstack([C_acc, C_lvl])
        d_acc = np.concatenate([d_acc, d_lvl])
        report.residual = float(np.linalg.norm(Aw @ x - bw)) if Aw.shape[0] else 0.0
        reports.append(report)

    return HierarchyResult(x, reports)


def _infer_dim(tasks):
    for t in tasks:
        for M in (t.A, t.C):
            if M is not None and len(M):
                return np.atleast_2d(np.asarray(M)).shape[1]
    raise ValueError("cannot infer decision dimension from empty tasks")


def _relax_level(Z, x, C_acc, d_acc, C_lvl, d_lvl):
    """Least-squares slack on the level's own rows, honoring inherited rows."""
    nz, m = Z.shape[1], C_lvl.shape[0]
    H = np.zeros((nz + m, nz + m))
    H[nz:, nz:] = np.eye(m)
    g = np.zeros(nz + m)
    Cin = np.vstack(
        [
            np.hstack([C_acc @ Z, np.zeros((C_acc.shape[0], m))]),
            np.hstack([C_lvl @ Z, -np.eye(m)]),
            np.hstack([np.zeros((m, nz)), -np.eye(m)]),  # slack >= 0
        ]
    )
    din = np.concatenate([d_acc - C_acc @ x, d_lvl - C_lvl @ x, np.zeros(m)])
    res = solve_qp(QpProblem(H, g, Cin=Cin, din=din))
    s = np.maximum(res.x[nz:], 0.0)
    return d_lvl + s, float(np.linalg.norm(s))
