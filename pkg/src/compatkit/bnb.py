"""Branch-and-bound MIQP for the compatibility constant.

The sign disjunction on each support coordinate is modeled by a split
v_j = v_j+ - v_j- with v_j+, v_j- >= 0 and the normalization
sum_S (v_j+ + v_j-) = 1.  Complementarity ("at most one of v+, v- nonzero")
is enforced either by Big-M rows with relaxed binaries (``BIG_M``) or purely
by branching (``SOS1``, the default: its relaxation needs no constant at all).

Each tree node fixes a subset of support coordinates to PLUS_ONLY or
MINUS_ONLY; its convex relaxation lower-bounds every sign-feasible completion.
Search is best-first on the relaxation bound (ties: deepest node, then
creation order), with an incumbent seeded by K Bernoulli sign vectors.

The incumbent is always an upper bound on phi^2 and the running frontier
minimum a lower bound, so time-limited runs return a sound bracket.
"""

from __future__ import annotations

import enum
import heapq
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .enumeration import FixedSignSubproblem, phi_for_pattern
from .errors import InvalidConfig, SolverFailure
from .model import (
    ActiveSet,
    CompatResult,
    CompatStatus,
    CONE_BUDGET,
    GramMatrix,
    SignPattern,
    make_result,
)
from .qp import DEFAULT_TOLERANCES, QpProblem, QpStatus, SolverTolerances, solve_qp
from .rng import SignStream

# complementarity slack below which a relaxation point counts as sign-feasible
_COMP_TOL = 1e-7
# safety margin subtracted from relaxation objectives before use as bounds
_BOUND_SLACK = 1e-9


class Formulation(enum.Enum):
    BIG_M = "bigm"
    SOS1 = "sos1"


class Fix(enum.Enum):
    FREE = "Free"
    PLUS_ONLY = "PlusOnly"
    MINUS_ONLY = "MinusOnly"


@dataclass(frozen=True)
class BnbConfig:
    formulation: Formulation = Formulation.SOS1
    big_m: float = 1.0
    warm_starts_k: int = 0
    time_limit: float | None = 60.0
    gap_tol: float = 1e-6
    node_limit: int = 1_000_000
    seed: int = 0

    def __post_init__(self):
        if self.big_m <= 0:
            raise InvalidConfig("big_m must be positive")
        if self.gap_tol < 0:
            raise InvalidConfig("gap_tol must be nonnegative")
        if self.warm_starts_k < 0:
            raise InvalidConfig("warm_starts_k must be nonnegative")
        if self.time_limit is not None and self.time_limit < 0:
            raise InvalidConfig("time_limit must be nonnegative or None")
        if self.node_limit < 1:
            raise InvalidConfig("node_limit must be positive")


@dataclass
class BnbNode:
    """Partial sign assignment plus the bound proven by its relaxation."""

    fixed: tuple[Fix, ...]
    relax_bound: float
    depth: int
    solution: np.ndarray | None = field(default=None, repr=False)


def _split_layout(active: ActiveSet, p: int):
    s = active.s
    r = p - s
    return s, r, 2 * s + 2 * r


def _split_objective(gram: GramMatrix, active: ActiveSet, m: int) -> np.ndarray:
    """P for the split variables (vp, vm, vsc, u): 2 s T'ΣT padded with zeros."""
    p = gram.p
    s = active.s
    r = p - s
    T = np.zeros((p, 2 * s + r))
    for i, j in enumerate(active.indices):
        T[j, i] = 1.0
        T[j, s + i] = -1.0
    for k_idx, j in enumerate(active.complement(p)):
        T[j, 2 * s + k_idx] = 1.0
    P = np.zeros((m, m))
    P[: 2 * s + r, : 2 * s + r] = 2.0 * s * (T.T @ (gram.values @ T))
    return P


def build_relaxation(
    fixed: tuple[Fix, ...],
    formulation: Formulation,
    gram: GramMatrix,
    active: ActiveSet,
    big_m: float = 1.0,
) -> QpProblem:
    """Convex relaxation of the node over the split variables (v+, v-, vsc, u).

    SOS1 drops complementarity entirely.  BIG_M relaxes the binaries to [0,1]
    and then eliminates them exactly: for a free coordinate, a feasible
    b_j in [0,1] with v+_j <= M b_j and v-_j <= M(1-b_j) exists iff
    v+_j + v-_j <= M (reconstruct b_j = v+_j / M), so the relaxation value is
    unchanged while the solver never sees the cost-flat binary directions.
    Fixed coordinates zero out one side of the split in both formulations;
    under BIG_M the surviving side keeps its v <= M cap.
    """
    p = gram.p
    with_b = formulation is Formulation.BIG_M
    s, r, m = _split_layout(active, p)
    if len(fixed) != s:
        raise InvalidConfig("fixed assignment length must equal the support size")
    P = _split_objective(gram, active, m)
    q = np.zeros(m)

    k = 1 + 2 * s + (3 * r + 1 if r else 0) + (s if with_b else 0)
    A = np.zeros((k, m))
    l = np.zeros(k)
    u = np.zeros(k)
    row = 0

    A[row, : 2 * s] = 1.0          # sum_S (v+ + v-) = 1
    l[row] = u[row] = 1.0
    row += 1

    for i in range(s):             # v+_i >= 0, forced to 0 under MINUS_ONLY
        A[row, i] = 1.0
        l[row] = 0.0
        u[row] = 0.0 if fixed[i] is Fix.MINUS_ONLY else np.inf
        row += 1
    for i in range(s):             # v-_i >= 0, forced to 0 under PLUS_ONLY
        A[row, s + i] = 1.0
        l[row] = 0.0
        u[row] = 0.0 if fixed[i] is Fix.PLUS_ONLY else np.inf
        row += 1

    if r:
        off = 2 * s
        for k_idx in range(r):
            A[row, off + k_idx] = 1.0           # vsc - u <= 0
            A[row, off + r + k_idx] = -1.0
            l[row] = -np.inf
            u[row] = 0.0
            row += 1
            A[row, off + k_idx] = 1.0           # vsc + u >= 0
            A[row, off + r + k_idx] = 1.0
            l[row] = 0.0
            u[row] = np.inf
            row += 1
        for k_idx in range(r):
            A[row, off + r + k_idx] = 1.0       # u >= 0
            l[row] = 0.0
            u[row] = np.inf
            row += 1
        A[row, off + r : off + 2 * r] = 1.0     # sum u <= budget
        l[row] = -np.inf
        u[row] = CONE_BUDGET
        row += 1

    if with_b:
        for i in range(s):
            # free: v+ + v- <= M (eliminated binary); fixed: surviving side <= M
            if fixed[i] is Fix.FREE:
                A[row, i] = 1.0
                A[row, s + i] = 1.0
            elif fixed[i] is Fix.PLUS_ONLY:
                A[row, i] = 1.0
            else:
                A[row, s + i] = 1.0
            l[row] = -np.inf
            u[row] = big_m
            row += 1

    return QpProblem(P=P, q=q, A=A, l=l, u=u)


def relax_node(
    node: BnbNode,
    formulation: Formulation,
    gram: GramMatrix,
    active: ActiveSet,
    big_m: float = 1.0,
    tol: SolverTolerances = DEFAULT_TOLERANCES,
    warm: np.ndarray | None = None,
):
    """Solve the node's convex relaxation; raises SolverFailure on non-convergence."""
    prob = build_relaxation(node.fixed, formulation, gram, active, big_m)
    sol = solve_qp(prob, warm=warm, tol=tol)
    if sol.status is not QpStatus.SOLVED:
        raise SolverFailure(f"node relaxation ended with status {sol.status.value}")
    return sol


def warm_start(
    gram: GramMatrix,
    active: ActiveSet,
    k: int,
    seed: int,
    tol: SolverTolerances = DEFAULT_TOLERANCES,
    patterns: list[SignPattern] | None = None,
) -> tuple[float, np.ndarray | None, SignPattern | None]:
    """Best incumbent over k Bernoulli(1/2) sign vectors (or an explicit list).

    Returns (+inf, None, None) when there is nothing to solve.  Sign bits come
    from the portable SplitMix64 stream, so draws are platform-independent.
    """
    if patterns is None:
        stream = SignStream(seed)
        patterns = [SignPattern(stream.next_signs(active.s)) for _ in range(k)]
    best_val = np.inf
    best_v = None
    best_z = None
    for z in patterns:
        val, v = phi_for_pattern(FixedSignSubproblem(gram, active, z), tol=tol)
        if val < best_val or (val == best_val and best_z is not None and z.signs < best_z.signs):
            best_val, best_v, best_z = val, v, z
    return best_val, best_v, best_z


def _extract_split(sol_x: np.ndarray, s: int, r: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return sol_x[:s], sol_x[s : 2 * s], sol_x[2 * s : 2 * s + r]


def _node_pattern(fixed: tuple[Fix, ...], vp: np.ndarray, vm: np.ndarray) -> SignPattern:
    signs = []
    for i, fx in enumerate(fixed):
        if fx is Fix.PLUS_ONLY:
            signs.append(1)
        elif fx is Fix.MINUS_ONLY:
            signs.append(-1)
        else:
            signs.append(1 if vp[i] >= vm[i] else -1)
    return SignPattern(tuple(signs))


def phi_bnb(
    gram: GramMatrix,
    active: ActiveSet,
    cfg: BnbConfig = BnbConfig(),
    tol: SolverTolerances = DEFAULT_TOLERANCES,
    on_progress: Callable[[float, float, float], None] | None = None,
    stats: dict | None = None,
) -> CompatResult:
    """Branch-and-bound computation of phi^2 with warm starts and limits.

    Status is ``OPTIMAL`` when the relative gap closes below ``cfg.gap_tol``
    (or the tree is exhausted); otherwise ``TIME_LIMIT_FEASIBLE`` with the
    incumbent upper bound and the proven global lower bound.  Without a time
    limit the run is fully deterministic for a fixed (input, config, seed).
    """
    active.validate_against(gram.p)
    s = active.s
    r = gram.p - s
    t0 = time.perf_counter()
    deadline = None if cfg.time_limit is None else t0 + cfg.time_limit

    solved = 0

    inc_val, inc_v, inc_z = warm_start(gram, active, cfg.warm_starts_k, cfg.seed, tol=tol)
    solved += cfg.warm_starts_k
    warm_value = inc_val

    def timed_out() -> bool:
        return deadline is not None and time.perf_counter() >= deadline

    def report():
        if on_progress is not None:
            on_progress(time.perf_counter() - t0, inc_val, global_lb)

    global_lb = 0.0
    heap: list[tuple[float, int, int, BnbNode]] = []
    next_id = 0
    nodes_expanded = 0
    hit_limit = False

    def push(node: BnbNode):
        nonlocal next_id
        heapq.heappush(heap, (node.relax_bound, -node.depth, next_id, node))
        next_id += 1

    if not timed_out():
        root = BnbNode(fixed=(Fix.FREE,) * s, relax_bound=0.0, depth=0)
        sol = relax_node(root, cfg.formulation, gram, active, cfg.big_m, tol)
        solved += 1
        root.relax_bound = max(0.0, sol.objective - _BOUND_SLACK * (1.0 + abs(sol.objective)))
        root.solution = sol.x
        push(root)
    else:
        hit_limit = True

    while heap:
        if timed_out() or nodes_expanded >= cfg.node_limit:
            hit_limit = True
            break
        _, _, _, node = heapq.heappop(heap)
        global_lb = max(global_lb, min(node.relax_bound, inc_val))
        report()
        if inc_val < np.inf and inc_val - global_lb <= cfg.gap_tol * max(inc_val, 1e-12):
            heap.clear()
            break
        nodes_expanded += 1

        vp, vm, _ = _extract_split(node.solution, s, r)
        free_idx = [i for i, fx in enumerate(node.fixed) if fx is Fix.FREE]
        viol = np.minimum(vp, vm)
        worst = max(free_idx, key=lambda i: (viol[i], -i)) if free_idx else None

        if worst is None or viol[worst] <= _COMP_TOL:
            z = _node_pattern(node.fixed, vp, vm)
            val, v = phi_for_pattern(FixedSignSubproblem(gram, active, z), tol=tol)
            solved += 1
            if val < inc_val or (val == inc_val and inc_z is not None and z.signs < inc_z.signs):
                inc_val, inc_v, inc_z = val, v, z
            # close the node unless integrality slack left a real value gap
            if val - node.relax_bound <= max(1e-9, 0.5 * cfg.gap_tol * max(abs(val), 1.0)):
                continue
            if worst is None:
                continue

        for direction in (Fix.PLUS_ONLY, Fix.MINUS_ONLY):
            child_fixed = tuple(
                direction if i == worst else fx for i, fx in enumerate(node.fixed)
            )
            child = BnbNode(fixed=child_fixed, relax_bound=node.relax_bound, depth=node.depth + 1)
            if timed_out():
                # inherit the parent bound unsolved so the frontier stays sound
                child.solution = node.solution
                push(child)
                continue
            sol = relax_node(child, cfg.formulation, gram, active, cfg.big_m, tol,
                             warm=node.solution)
            solved += 1
            bound = max(0.0, sol.objective - _BOUND_SLACK * (1.0 + abs(sol.objective)))
            child.relax_bound = max(node.relax_bound, bound)
            child.solution = sol.x
            if child.relax_bound < inc_val - 1e-12 * max(1.0, inc_val):
                push(child)
            # children at or above the incumbent are dropped: their subtrees
            # cannot improve it, and the frontier minimum ignores them

    if heap:
        # interrupted: the remaining frontier limits what is proven
        frontier_min = min(item[0] for item in heap)
        global_lb = max(global_lb, min(frontier_min, inc_val))
    elif not hit_limit and inc_val < np.inf:
        global_lb = inc_val

    if not np.isfinite(inc_val):
        # no warm start and no node completed: fall back to one deterministic
        # pattern so the result always carries a feasible point
        z = SignPattern((1,) * s)
        inc_val, inc_v, inc_z = warm_start(gram, active, 0, cfg.seed, tol=tol, patterns=[z])
        solved += 1
        global_lb = 0.0
        hit_limit = True

    status = CompatStatus.TIME_LIMIT_FEASIBLE if hit_limit else CompatStatus.OPTIMAL
    report()
    if stats is not None:
        stats["nodes_expanded"] = nodes_expanded
        stats["warm_start_value"] = warm_value
        stats["gap"] = (inc_val - min(global_lb, inc_val)) / max(inc_val, 1e-12)
    return make_result(
        phi_sq=inc_val,
        minimizer=inc_v,
        status=status,
        lower_bound=min(global_lb, inc_val),
        wall_time=time.perf_counter() - t0,
        subproblems_solved=solved,
        pattern=inc_z,
    )
