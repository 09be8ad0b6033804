"""Core domain types: design matrices, Gram matrices, active sets, results.

Conventions used throughout the package:

* indices are 0-based internally (the CLI converts from 1-based),
* a standardized design has column means 0 and column squared norms equal
  to n, so the Gram matrix X'X/n has unit diagonal,
* population covariance matrices may be wrapped as :class:`GramMatrix`
  directly, bypassing standardization.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, InvalidConfig, NonFiniteInput, ZeroVarianceColumn

# Objective values of phi^2 below this floor are reported as "compatibility
# condition does not hold" (phi = 0).  Documented in every output that uses it.
EPS_ZERO = 1e-6

# l1 budget on the off-support block of the compatibility cone, |v_Sc|_1 <= 3.
CONE_BUDGET = 3.0

_STD_TOL = 1e-10
_SYM_TOL = 1e-12
_PSD_TOL = -1e-10


def _readonly(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=float, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class DesignMatrix:
    """An n x p data matrix with rows as observations."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise DimensionMismatch(f"design matrix must be 2-d, got shape {v.shape}")
        if v.shape[0] < 2 or v.shape[1] < 1:
            raise InvalidConfig(f"need n >= 2 and p >= 1, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise NonFiniteInput("design matrix contains non-finite entries")
        object.__setattr__(self, "values", _readonly(v))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    def is_standardized(self, tol: float = _STD_TOL) -> bool:
        """Column means 0 and squared norms n, within ``tol`` relative."""
        v = self.values
        n = self.n
        means_ok = np.all(np.abs(v.mean(axis=0)) <= tol * max(1.0, float(np.abs(v).max())))
        norms = (v * v).sum(axis=0)
        norms_ok = np.all(np.abs(norms - n) <= tol * n)
        return bool(means_ok and norms_ok)


@dataclass(frozen=True)
class Standardization:
    """A standardized design plus the factors needed to round-trip it."""

    design: DesignMatrix
    center: np.ndarray
    scale: np.ndarray

    def unstandardize(self) -> np.ndarray:
        return self.design.values * self.scale + self.center


def standardize(raw: DesignMatrix | np.ndarray) -> Standardization:
    """Center each column and rescale it to squared norm n.

    Raises :class:`ZeroVarianceColumn` for constant columns and
    :class:`NonFiniteInput` for NaN/inf entries.
    """
    x = raw.values if isinstance(raw, DesignMatrix) else np.asarray(raw, dtype=float)
    if x.ndim != 2:
        raise DimensionMismatch(f"expected a 2-d array, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise NonFiniteInput("design matrix contains non-finite entries")
    n = x.shape[0]
    if n < 2:
        raise InvalidConfig("standardization needs n >= 2")
    center = x.mean(axis=0)
    centered = x - center
    sq = (centered * centered).sum(axis=0)
    # scale so that the standardized column has squared norm exactly n
    col_scale_sq = sq / n
    bad = np.flatnonzero(col_scale_sq <= 0.0)
    if bad.size:
        raise ZeroVarianceColumn(int(bad[0]))
    scale = np.sqrt(col_scale_sq)
    return Standardization(DesignMatrix(centered / scale), _readonly(center), _readonly(scale))


@dataclass(frozen=True)
class GramMatrix:
    """A p x p symmetric positive-semidefinite matrix (sample or population)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise DimensionMismatch(f"Gram matrix must be square, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise NonFiniteInput("Gram matrix contains non-finite entries")
        if np.abs(v - v.T).max() > _SYM_TOL:
            raise InvalidConfig("Gram matrix is not symmetric within 1e-12")
        v = 0.5 * (v + v.T)
        if not _is_psd(v):
            raise InvalidConfig("Gram matrix has an eigenvalue below -1e-10; input looks corrupt")
        object.__setattr__(self, "values", _readonly(v))

    @property
    def p(self) -> int:
        return self.values.shape[0]

    def has_unit_diagonal(self, tol: float = _STD_TOL) -> bool:
        return bool(np.abs(np.diag(self.values) - 1.0).max() <= tol)

    def quad_form(self, v: np.ndarray) -> float:
        v = np.asarray(v, dtype=float)
        if v.shape != (self.p,):
            raise DimensionMismatch(f"expected vector of length {self.p}, got {v.shape}")
        return float(v @ self.values @ v)


def _is_psd(v: np.ndarray) -> bool:
    # Cholesky of V + |PSD_TOL| I succeeding certifies min eig >= PSD_TOL;
    # fall back to an exact eigenvalue check on failure.
    try:
        np.linalg.cholesky(v + (-_PSD_TOL) * np.eye(v.shape[0]))
        return True
    except np.linalg.LinAlgError:
        return bool(np.linalg.eigvalsh(v).min() >= _PSD_TOL)


def gram(design: DesignMatrix) -> GramMatrix:
    """The Gram matrix X'X/n of a standardized design."""
    if not design.is_standardized(tol=1e-8):
        raise InvalidConfig("gram() expects a standardized design; call standardize() first")
    x = design.values
    return GramMatrix(x.T @ x / design.n)


@dataclass(frozen=True)
class ActiveSet:
    """A sorted set of 0-based support indices."""

    indices: tuple[int, ...]

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if len(idx) == 0:
            raise InvalidConfig("active set must contain at least one index")
        if any(i < 0 for i in idx):
            raise InvalidConfig("active-set indices must be nonnegative")
        if len(set(idx)) != len(idx):
            raise InvalidConfig("active-set indices must be distinct")
        if list(idx) != sorted(idx):
            idx = tuple(sorted(idx))
        object.__setattr__(self, "indices", idx)

    @property
    def s(self) -> int:
        return len(self.indices)

    def validate_against(self, p: int) -> None:
        if self.indices[-1] >= p:
            raise InvalidConfig(f"active-set index {self.indices[-1]} out of range for p={p}")

    def complement(self, p: int) -> tuple[int, ...]:
        self.validate_against(p)
        inside = set(self.indices)
        return tuple(j for j in range(p) if j not in inside)


@dataclass(frozen=True)
class SignPattern:
    """A ±1 assignment for the support coordinates, ordered as the active set."""

    signs: tuple[int, ...]

    def __post_init__(self):
        sg = tuple(int(z) for z in self.signs)
        if len(sg) == 0 or any(z not in (-1, 1) for z in sg):
            raise InvalidConfig("sign pattern entries must be ±1")
        object.__setattr__(self, "signs", sg)

    @property
    def s(self) -> int:
        return len(self.signs)

    @property
    def is_canonical(self) -> bool:
        return self.signs[0] == 1

    def flipped(self) -> "SignPattern":
        return SignPattern(tuple(-z for z in self.signs))


class CompatStatus(enum.Enum):
    OPTIMAL = "Optimal"
    TIME_LIMIT_FEASIBLE = "TimeLimitFeasible"
    ZERO_DETECTED = "ZeroDetected"
    INFEASIBLE = "Infeasible"


@dataclass(frozen=True)
class CompatResult:
    """Outcome of a compatibility-constant computation.

    ``phi_sq`` is the objective s v'Σv at the best feasible point found and
    ``lower_bound`` a proven global lower bound on phi^2 (equal to ``phi_sq``
    for exact runs).  When the objective falls below :data:`EPS_ZERO` the
    status is ``ZERO_DETECTED`` and ``phi`` is reported as exactly 0.
    """

    phi_sq: float
    phi: float
    minimizer: np.ndarray
    status: CompatStatus
    lower_bound: float
    wall_time: float
    subproblems_solved: int
    pattern: SignPattern | None = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "minimizer", _readonly(self.minimizer))
        if self.lower_bound > self.phi_sq + 1e-6:
            raise InvalidConfig(
                f"lower bound {self.lower_bound} exceeds objective {self.phi_sq}"
            )

    @property
    def condition_holds(self) -> bool:
        return self.status is not CompatStatus.ZERO_DETECTED and self.phi_sq >= EPS_ZERO


def make_result(
    phi_sq: float,
    minimizer: np.ndarray,
    status: CompatStatus,
    lower_bound: float,
    wall_time: float,
    subproblems_solved: int,
    pattern: SignPattern | None = None,
) -> CompatResult:
    """Assemble a CompatResult, applying the phi = 0 floor uniformly."""
    phi_sq = max(float(phi_sq), 0.0)
    if phi_sq < EPS_ZERO:
        status = CompatStatus.ZERO_DETECTED
        phi = 0.0
    else:
        phi = float(np.sqrt(phi_sq))
    return CompatResult(
        phi_sq=phi_sq,
        phi=phi,
        minimizer=minimizer,
        status=status,
        lower_bound=min(float(lower_bound), phi_sq),
        wall_time=float(wall_time),
        subproblems_solved=int(subproblems_solved),
        pattern=pattern,
    )


def cone_norms(v: np.ndarray, active: ActiveSet) -> tuple[float, float]:
    """Return (|v_S|_1, |v_Sc|_1) for a candidate minimizer."""
    v = np.asarray(v, dtype=float)
    mask = np.zeros(v.shape[0], dtype=bool)
    mask[list(active.indices)] = True
    return float(np.abs(v[mask]).sum()), float(np.abs(v[~mask]).sum())


def check_result_invariants(result: CompatResult, gram_: GramMatrix, active: ActiveSet,
                            tol: float = 1e-6) -> None:
    """Assert the CompatResult contracts; used by property and acceptance tests."""
    l1_s, l1_sc = cone_norms(result.minimizer, active)
    assert abs(l1_s - 1.0) <= tol, f"|v_S|_1 = {l1_s} != 1"
    assert l1_sc <= CONE_BUDGET + tol, f"|v_Sc|_1 = {l1_sc} > 3"
    obj = active.s * gram_.quad_form(result.minimizer)
    scale = max(1.0, abs(obj))
    assert abs(result.phi_sq - obj) <= tol * scale, (
        f"phi_sq {result.phi_sq} inconsistent with s v'Σv = {obj}"
    )
    assert result.lower_bound <= result.phi_sq + 1e-6
