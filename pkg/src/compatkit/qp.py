"""Dense convex quadratic programming by operator splitting.

Solves problems of the form

    minimize    0.5 x'Px + q'x
    subject to  l <= Ax <= u        (P symmetric PSD)

with an over-relaxed ADMM iteration on a regularized KKT system, a diagonal
penalty parameter that is adapted periodically, and an active-set "polish"
step that solves the KKT system restricted to the detected active constraints.
Polish both sharpens objectives and lets the solver reach tight tolerances
(default 1e-9) long before the raw splitting iteration would.

The iteration, written for penalty vector rho and regularization sigma:

    xt  = (P + sigma I + A' diag(rho) A)^-1 (sigma x - q + A'(rho z - y))
    zt  = A xt
    x+  = alpha xt + (1 - alpha) x
    z+  = clip(alpha zt + (1 - alpha) z + y / rho, l, u)
    y+  = y + rho (alpha zt + (1 - alpha) z - z+)

Duals follow the convention P x + q + A'y = 0 at optimality, with y <= 0 on
lower-active rows and y >= 0 on upper-active rows.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import cho_factor, cho_solve, lu_factor, lu_solve

from .errors import DimensionMismatch, InvalidConfig, NumericalBreakdown

log = logging.getLogger(__name__)

# Bounds at or beyond this magnitude are treated as infinite.
INF = 1e30

_RHO_MIN = 1e-6
_RHO_MAX = 1e6
_RHO_EQ_SCALE = 1e3  # equality rows get a stiffer penalty, as in OSQP


class QpStatus(enum.Enum):
    SOLVED = "Solved"
    MAX_ITERATIONS = "MaxIterations"
    PRIMAL_INFEASIBLE = "PrimalInfeasible"


@dataclass(frozen=True)
class QpProblem:
    """Standard-form problem container; arrays are copied and frozen."""

    P: np.ndarray
    q: np.ndarray
    A: np.ndarray
    l: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        P = np.atleast_2d(np.asarray(self.P, dtype=float))
        q = np.atleast_1d(np.asarray(self.q, dtype=float))
        A = np.asarray(self.A, dtype=float)
        if A.size == 0:
            A = A.reshape(0, P.shape[0])
        A = np.atleast_2d(A)
        l = np.atleast_1d(np.asarray(self.l, dtype=float))
        u = np.atleast_1d(np.asarray(self.u, dtype=float))
        m = P.shape[0]
        if P.shape != (m, m):
            raise DimensionMismatch(f"P must be square, got {P.shape}")
        if q.shape != (m,):
            raise DimensionMismatch(f"q has shape {q.shape}, expected ({m},)")
        if A.shape[1] != m:
            raise DimensionMismatch(f"A has {A.shape[1]} columns, expected {m}")
        k = A.shape[0]
        if l.shape != (k,) or u.shape != (k,):
            raise DimensionMismatch("bound vectors must match the constraint row count")
        if not (np.all(np.isfinite(P)) and np.all(np.isfinite(q)) and np.all(np.isfinite(A))):
            raise InvalidConfig("P, q, A must be finite")
        if np.any(np.isnan(l)) or np.any(np.isnan(u)):
            raise InvalidConfig("bounds may be infinite but not NaN")
        if np.abs(P - P.T).max() > 1e-8 * max(1.0, float(np.abs(P).max())):
            raise InvalidConfig("P must be symmetric")
        l = np.clip(l, -INF, INF)
        u = np.clip(u, -INF, INF)
        if np.any(l > u):
            raise InvalidConfig("need l <= u componentwise")
        for name, arr in (("P", 0.5 * (P + P.T)), ("q", q), ("A", A), ("l", l), ("u", u)):
            a = np.array(arr, copy=True)
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def m(self) -> int:
        return self.P.shape[0]

    @property
    def k(self) -> int:
        return self.A.shape[0]

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.P @ x + self.q @ x)


@dataclass(frozen=True)
class SolverTolerances:
    eps_abs: float = 1e-9
    eps_rel: float = 1e-9
    eps_prim_inf: float = 1e-8
    max_iter: int = 200_000
    check_interval: int = 25
    rho_update_interval: int = 50
    sigma: float = 1e-6
    alpha: float = 1.6
    rho0: float = 0.1
    polish: bool = True

    def __post_init__(self):
        if self.eps_abs < 0 or self.eps_rel < 0 or (self.eps_abs == 0 and self.eps_rel == 0):
            raise InvalidConfig("need nonnegative tolerances, not both zero")
        if not (0 < self.alpha < 2):
            raise InvalidConfig("over-relaxation alpha must lie in (0, 2)")
        if self.max_iter < 1 or self.check_interval < 1:
            raise InvalidConfig("iteration limits must be positive")


DEFAULT_TOLERANCES = SolverTolerances()


@dataclass
class QpSolution:
    x: np.ndarray
    y: np.ndarray
    objective: float
    primal_residual: float
    dual_residual: float
    status: QpStatus
    iterations: int
    polished: bool = False


def _violation(Ax: np.ndarray, l: np.ndarray, u: np.ndarray) -> float:
    if Ax.size == 0:
        return 0.0
    return float(max(0.0, (l - Ax).max(initial=0.0), (Ax - u).max(initial=0.0)))


def _infnorm(v: np.ndarray) -> float:
    return float(np.abs(v).max()) if v.size else 0.0


class _Workspace:
    """Factorization cache for one (P, A, rho) triple."""

    def __init__(self, P, A, sigma, rho_vec):
        self.rho_vec = rho_vec
        M = P + sigma * np.eye(P.shape[0]) + (A.T * rho_vec) @ A
        self.chol = cho_factor(M, lower=True, check_finite=False)

    def solve(self, rhs):
        return cho_solve(self.chol, rhs, check_finite=False)


def solve_qp(
    prob: QpProblem,
    warm: np.ndarray | None = None,
    tol: SolverTolerances = DEFAULT_TOLERANCES,
) -> QpSolution:
    """Solve the QP, optionally warm-started at ``warm``.

    Returns a :class:`QpSolution` whose residuals satisfy the configured
    tolerances when the status is ``SOLVED``.  Raises
    :class:`NumericalBreakdown` if iterates become non-finite.
    """
    P, q, A, l, u = prob.P, prob.q, prob.A, prob.l, prob.u
    m, k = prob.m, prob.k
    AT = np.ascontiguousarray(A.T)
    eq = l == u

    if warm is not None:
        warm = np.asarray(warm, dtype=float)
        if warm.shape != (m,):
            raise DimensionMismatch(f"warm start has shape {warm.shape}, expected ({m},)")
        x = warm.copy()
    else:
        x = np.zeros(m)
    Ax = A @ x
    z = np.clip(Ax, l, u)
    y = np.zeros(k)

    rho0 = tol.rho0
    rho_vec = np.where(eq, rho0 * _RHO_EQ_SCALE, rho0)
    ws = _Workspace(P, A, tol.sigma, rho_vec)

    best = None
    polish_trigger = 1e-3
    delta_y = np.zeros(k)
    debug = log.isEnabledFor(logging.DEBUG)

    it = 0
    while it < tol.max_iter:
        it += 1
        rhs = tol.sigma * x - q + AT @ (rho_vec * z - y)
        xt = ws.solve(rhs)
        if not np.all(np.isfinite(xt)):
            raise NumericalBreakdown(f"non-finite iterate at iteration {it}")
        zt = A @ xt
        x = tol.alpha * xt + (1.0 - tol.alpha) * x
        w = tol.alpha * zt + (1.0 - tol.alpha) * z + y / rho_vec
        z_new = np.clip(w, l, u)
        y_prev = y
        y = y + rho_vec * (tol.alpha * zt + (1.0 - tol.alpha) * z - z_new)
        delta_y = y - y_prev
        z = z_new

        if it % tol.check_interval != 0 and it != tol.max_iter:
            continue

        Ax = A @ x
        Px = P @ x
        Aty = AT @ y
        r_prim = _infnorm(Ax - z)
        r_dual = _infnorm(Px + q + Aty)
        scale_p = max(_infnorm(Ax), _infnorm(z))
        scale_d = max(_infnorm(Px), _infnorm(q), _infnorm(Aty))
        eps_p = tol.eps_abs + tol.eps_rel * scale_p
        eps_d = tol.eps_abs + tol.eps_rel * scale_d
        if debug:
            log.debug("qp iter=%d r_prim=%.3e r_dual=%.3e rho=%.3e", it, r_prim, r_dual, rho0)

        raw_ok = r_prim <= eps_p and r_dual <= eps_d
        viol = _violation(Ax, l, u)
        if best is None or max(viol, r_dual) < max(best[2], best[3]):
            best = (x.copy(), y.copy(), viol, r_dual)

        if tol.polish and (raw_ok or max(r_prim, r_dual) <= polish_trigger):
            pol = _polish(prob, AT, eq, x, y, z, r_prim, tol)
            if pol is not None:
                pol.iterations = it
                return pol
            polish_trigger = max(r_prim, r_dual) / 10.0

        if raw_ok:
            return QpSolution(
                x=x.copy(),
                y=y.copy(),
                objective=prob.objective(x),
                primal_residual=_violation(Ax, l, u),
                dual_residual=r_dual,
                status=QpStatus.SOLVED,
                iterations=it,
            )

        if _primal_infeasible(delta_y, AT, l, u, tol.eps_prim_inf):
            return QpSolution(
                x=x.copy(),
                y=y.copy(),
                objective=prob.objective(x),
                primal_residual=_violation(Ax, l, u),
                dual_residual=r_dual,
                status=QpStatus.PRIMAL_INFEASIBLE,
                iterations=it,
            )

        if it % tol.rho_update_interval == 0:
            # raw residual ratio: our problems are O(1)-scaled, and normalized
            # ratios degenerate when q = 0 drives the dual scale to zero
            ratio = np.sqrt(max(r_prim, 1e-16) / max(r_dual, 1e-16))
            new_rho0 = float(np.clip(rho0 * ratio, _RHO_MIN, _RHO_MAX))
            if new_rho0 > 5.0 * rho0 or new_rho0 < rho0 / 5.0:
                rho0 = new_rho0
                rho_vec = np.where(eq, rho0 * _RHO_EQ_SCALE, rho0)
                ws = _Workspace(P, A, tol.sigma, rho_vec)

    x_b, y_b, viol_b, rd_b = best if best is not None else (x, y, np.inf, np.inf)
    return QpSolution(
        x=x_b,
        y=y_b,
        objective=prob.objective(x_b),
        primal_residual=viol_b,
        dual_residual=rd_b,
        status=QpStatus.MAX_ITERATIONS,
        iterations=it,
    )


def _primal_infeasible(delta_y, AT, l, u, eps_pinf) -> bool:
    """OSQP-style primal infeasibility certificate test on the dual step."""
    nd = _infnorm(delta_y)
    if nd <= eps_pinf or delta_y.size == 0:
        return False
    d = delta_y / nd
    pos = np.maximum(d, 0.0)
    neg = np.minimum(d, 0.0)
    # an infinite bound on a pushed row invalidates the certificate
    if np.any((u >= INF) & (pos > eps_pinf)) or np.any((l <= -INF) & (neg < -eps_pinf)):
        return False
    finite_u = np.where(u >= INF, 0.0, u)
    finite_l = np.where(l <= -INF, 0.0, l)
    support = float(finite_u @ pos + finite_l @ neg)
    if support >= -eps_pinf:
        return False
    return _infnorm(AT @ d) <= eps_pinf


def _polish(prob: QpProblem, AT, eq, x, y, z, r_prim, tol: SolverTolerances) -> QpSolution | None:
    """Active-set polish: solve the KKT system on the detected active rows.

    Detection unions dual-sign information with rows whose auxiliary iterate
    sits within ``act_tol`` of a bound; degenerate (weakly active) constraints
    carry near-zero duals and would otherwise be missed.  Detection runs over
    a ladder of tolerances, loosest last: forcing a genuinely inactive row
    produces a wrong-sign multiplier or a constraint violation, both of which
    reject the candidate, so looseness cannot yield a false accept.
    """
    base = max(10.0 * r_prim, tol.eps_abs, 1e-12)
    ladder = sorted({base, 1e-7, 1e-5, 1e-3})
    for act_tol in ladder:
        sol = _polish_at(prob, AT, eq, x, y, z, act_tol, tol)
        if sol is not None:
            return sol
    return None


def _polish_at(prob: QpProblem, AT, eq, x, y, z, act_tol,
               tol: SolverTolerances) -> QpSolution | None:
    P, q, A, l, u = prob.P, prob.q, prob.A, prob.l, prob.u
    m, k = prob.m, prob.k
    y_tol = 1e-10 * max(1.0, _infnorm(y))
    low = (~eq) & ((y < -y_tol) | ((l > -INF) & (z - l <= act_tol)))
    upp = (~eq) & ((y > y_tol) | ((u < INF) & (u - z <= act_tol))) & ~low
    rows = np.flatnonzero(eq | low | upp)
    G = A[rows]
    b = np.where(eq[rows] | low[rows], l[rows], u[rows])
    if np.any(np.abs(b) >= INF):
        return None

    na = rows.size
    reg = 1e-9
    K = np.zeros((m + na, m + na))
    K[:m, :m] = P + reg * np.eye(m)
    K[:m, m:] = G.T
    K[m:, :m] = G
    K[m:, m:] = -reg * np.eye(na)
    # proximal center: directions flat in both P and G (e.g. relaxed binaries
    # with zero cost) must stay at the iterate's interior values, not fall to 0
    rhs = np.concatenate([-q + reg * x, b])
    rhs_true = np.concatenate([-q, b])
    try:
        lu = lu_factor(K, check_finite=False)
        t = lu_solve(lu, rhs, check_finite=False)
        # refinement targets the unregularized KKT system; flat directions see
        # zero residual there and keep their proximal values
        for _ in range(3):
            r = rhs_true.copy()
            r[:m] -= P @ t[:m] + G.T @ t[m:]
            r[m:] -= G @ t[:m]
            t += lu_solve(lu, r, check_finite=False)
    except (np.linalg.LinAlgError, ValueError):
        return None
    if not np.all(np.isfinite(t)):
        return None

    x_pol = t[:m]
    y_pol = np.zeros(k)
    y_pol[rows] = t[m:]

    sign_slack = 1e-7 * max(1.0, _infnorm(t[m:]))
    if np.any(y_pol[low] > sign_slack) or np.any(y_pol[upp] < -sign_slack):
        return None

    Ax = A @ x_pol
    viol = _violation(Ax, l, u)
    r_dual = _infnorm(P @ x_pol + q + AT @ y_pol)
    scale_p = max(_infnorm(Ax), _infnorm(np.clip(Ax, l, u)))
    scale_d = max(_infnorm(P @ x_pol), _infnorm(q), _infnorm(AT @ y_pol))
    if viol > tol.eps_abs + tol.eps_rel * scale_p:
        return None
    if r_dual > tol.eps_abs + tol.eps_rel * scale_d:
        return None
    return QpSolution(
        x=x_pol,
        y=y_pol,
        objective=prob.objective(x_pol),
        primal_residual=viol,
        dual_residual=r_dual,
        status=QpStatus.SOLVED,
        iterations=0,
        polished=True,
    )


def with_tolerances(base: SolverTolerances = DEFAULT_TOLERANCES, **kwargs) -> SolverTolerances:
    """Convenience for deriving a tolerance configuration with overrides."""
    return replace(base, **kwargs)
