"""Exact compatibility constants by sign-pattern enumeration.

For a fixed sign pattern z on the support S, the cone constraint
|v_S|_1 = 1 becomes linear and the problem is a convex QP over the decision
vector (v, u), u being the auxiliary absolute-value bounds on the
off-support block.  The exact phi^2 is the minimum of the per-pattern optima
over the 2^(s-1) canonical patterns (first sign fixed to +1, justified by
global sign-flip symmetry).
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .errors import ActiveSetTooLarge, InvalidConfig, SolverFailure
from .model import (
    ActiveSet,
    CompatResult,
    CompatStatus,
    CONE_BUDGET,
    EPS_ZERO,
    GramMatrix,
    SignPattern,
    make_result,
)
from .qp import DEFAULT_TOLERANCES, QpProblem, QpStatus, SolverTolerances, solve_qp

# Hard cap on the support size for enumeration: 2^19 subproblems.
S_MAX_DEFAULT = 20

_FEAS_TOL = 1e-6


@dataclass(frozen=True)
class FixedSignSubproblem:
    """One sign-fixed QP instance: Gram matrix, support, and support signs."""

    gram: GramMatrix
    active: ActiveSet
    signs: SignPattern

    def __post_init__(self):
        self.active.validate_against(self.gram.p)
        if self.signs.s != self.active.s:
            raise InvalidConfig(
                f"sign pattern length {self.signs.s} != active set size {self.active.s}"
            )


def build_fixed_sign_qp(sub: FixedSignSubproblem) -> QpProblem:
    """Assemble the sign-fixed QP in standard form.

    Decision vector x = (v in R^p, u in R^(p-s)).  The quadratic block is
    P = 2 s Sigma on v (so 0.5 x'Px = s v'Sigma v) and zero elsewhere.
    Rows: the normalization sum_S z_j v_j = 1; the s sign constraints
    z_j v_j >= 0; per off-support coordinate the pair -u <= v <= u plus
    u >= 0; and one budget row sum u <= 3.  With an empty off-support block
    the u variables and budget row are omitted.
    """
    sigma = sub.gram.values
    p = sub.gram.p
    s = sub.active.s
    supp = list(sub.active.indices)
    comp = list(sub.active.complement(p))
    r = len(comp)
    m = p + r

    P = np.zeros((m, m))
    P[:p, :p] = 2.0 * s * sigma
    q = np.zeros(m)

    k = 1 + s + (3 * r + 1 if r else 0)
    A = np.zeros((k, m))
    l = np.zeros(k)
    u = np.zeros(k)

    A[0, supp] = sub.signs.signs
    l[0] = u[0] = 1.0

    for row, (j, z) in enumerate(zip(supp, sub.signs.signs), start=1):
        A[row, j] = z
        l[row] = 0.0
        u[row] = np.inf

    if r:
        base = 1 + s
        for idx, j in enumerate(comp):
            uj = p + idx
            A[base + 2 * idx, j] = 1.0        # v_j - u_j <= 0
            A[base + 2 * idx, uj] = -1.0
            l[base + 2 * idx] = -np.inf
            u[base + 2 * idx] = 0.0
            A[base + 2 * idx + 1, j] = 1.0    # v_j + u_j >= 0
            A[base + 2 * idx + 1, uj] = 1.0
            l[base + 2 * idx + 1] = 0.0
            u[base + 2 * idx + 1] = np.inf
        base += 2 * r
        for idx in range(r):
            A[base + idx, p + idx] = 1.0
            l[base + idx] = 0.0
            u[base + idx] = np.inf
        A[base + r, p:] = 1.0
        l[base + r] = -np.inf
        u[base + r] = CONE_BUDGET

    return QpProblem(P=P, q=q, A=A, l=l, u=u)


def _check_pattern_feasibility(sub: FixedSignSubproblem, v: np.ndarray) -> None:
    supp = list(sub.active.indices)
    zs = np.asarray(sub.signs.signs, dtype=float)
    signed = zs * v[supp]
    if np.any(signed < -1e-8):
        raise SolverFailure("minimizer violates the fixed sign constraints")
    if abs(signed.sum() - 1.0) > _FEAS_TOL:
        raise SolverFailure(f"|v_S|_1 = {signed.sum()} deviates from 1 beyond tolerance")
    comp = list(sub.active.complement(sub.gram.p))
    if comp and np.abs(v[comp]).sum() > CONE_BUDGET + _FEAS_TOL:
        raise SolverFailure("minimizer violates the off-support l1 budget")


def phi_for_pattern(
    sub: FixedSignSubproblem,
    tol: SolverTolerances = DEFAULT_TOLERANCES,
) -> tuple[float, np.ndarray]:
    """Optimal value phi_z^2 and its minimizer v for one sign pattern."""
    prob = build_fixed_sign_qp(sub)
    sol = solve_qp(prob, tol=tol)
    if sol.status is not QpStatus.SOLVED:
        raise SolverFailure(f"fixed-sign QP ended with status {sol.status.value}")
    v = sol.x[: sub.gram.p].copy()
    _check_pattern_feasibility(sub, v)
    return max(float(sol.objective), 0.0), v


def pattern_from_code(s: int, code: int) -> SignPattern:
    """Canonical pattern number ``code``: first sign +1, then one sign per bit
    of ``code`` (least-significant bit first; 0 -> +1, 1 -> -1)."""
    signs = [1]
    for i in range(s - 1):
        signs.append(-1 if (code >> i) & 1 else 1)
    return SignPattern(tuple(signs))


def canonical_patterns(s: int) -> Iterator[SignPattern]:
    for code in range(1 << (s - 1)):
        yield pattern_from_code(s, code)


def _solve_range(
    gram: GramMatrix,
    active: ActiveSet,
    codes: range,
    tol: SolverTolerances,
    stop_on_zero: bool,
) -> tuple[float, tuple[int, ...], np.ndarray, int]:
    """Best (value, pattern, minimizer) over a code range; deterministic
    reduction by the total order (value, signs)."""
    best_val = np.inf
    best_key: tuple[int, ...] = ()
    best_v = None
    solved = 0
    for code in codes:
        pat = pattern_from_code(active.s, code)
        val, v = phi_for_pattern(FixedSignSubproblem(gram, active, pat), tol=tol)
        solved += 1
        if val < best_val or (val == best_val and pat.signs < best_key):
            best_val, best_key, best_v = val, pat.signs, v
        if stop_on_zero and best_val < EPS_ZERO:
            break
    return best_val, best_key, best_v, solved


def phi_enumerate(
    gram: GramMatrix,
    active: ActiveSet,
    threads: int = 1,
    s_max: int = S_MAX_DEFAULT,
    tol: SolverTolerances = DEFAULT_TOLERANCES,
    stop_on_zero: bool = False,
) -> CompatResult:
    """Exact phi^2 as the minimum of the 2^(s-1) canonical sign-fixed QPs.

    Ties between equal-minimum patterns resolve to the lexicographically
    smallest sign tuple, making the result independent of the thread count.
    ``stop_on_zero`` stops early once a pattern certifies phi^2 < EPS_ZERO
    (single-threaded scans only).
    """
    active.validate_against(gram.p)
    s = active.s
    if s > s_max:
        raise ActiveSetTooLarge(s, s_max)
    total = 1 << (s - 1)
    t0 = time.perf_counter()

    if threads <= 1 or total < 4 * threads:
        best_val, best_key, best_v, solved = _solve_range(
            gram, active, range(total), tol, stop_on_zero
        )
    else:
        bounds = np.linspace(0, total, threads + 1).astype(int)
        chunks = [range(bounds[i], bounds[i + 1]) for i in range(threads) if bounds[i] < bounds[i + 1]]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda c: _solve_range(gram, active, c, tol, False), chunks))
        best_val, best_key, best_v = np.inf, (), None
        solved = 0
        for val, key, v, cnt in parts:
            solved += cnt
            if val < best_val or (val == best_val and key < best_key):
                best_val, best_key, best_v = val, key, v

    return make_result(
        phi_sq=best_val,
        minimizer=best_v,
        status=CompatStatus.OPTIMAL,
        lower_bound=best_val,
        wall_time=time.perf_counter() - t0,
        subproblems_solved=solved,
        pattern=SignPattern(best_key),
    )
