"""Closed-form compatibility values for compound-symmetry covariance.

For Sigma_rho = (1-rho) I + rho 11' with 0 <= rho < 1 the quadratic form
splits as v'Sigma v = (1-rho)|v|_2^2 + rho (sum v)^2, which yields

    phi^2  = 1 - rho                          (s even, exact)
    phi^2 <= (1-rho)(1 + 1/(s(p-s)))          (s odd, upper bound)

with 1-rho a lower bound in both cases.  The witness vectors realizing the
upper values split the support into +1/s and -1/s halves; the odd case adds
1/(s r) on every off-support coordinate so the total sum stays zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, InvalidConfig, InvalidS
from .model import GramMatrix


@dataclass(frozen=True)
class CompoundSymmetry:
    """Equicorrelation structure: unit variances, common correlation rho >= 0."""

    rho: float
    p: int

    def __post_init__(self):
        if not (0.0 <= self.rho < 1.0):
            raise InvalidConfig(f"need 0 <= rho < 1, got {self.rho}")
        if self.p < 1:
            raise InvalidConfig("need p >= 1")

    def matrix(self) -> np.ndarray:
        return (1.0 - self.rho) * np.eye(self.p) + self.rho * np.ones((self.p, self.p))

    def gram(self) -> GramMatrix:
        return GramMatrix(self.matrix())


@dataclass(frozen=True)
class PhiSquaredBound:
    """Bracket [lower, upper] for the population phi^2; exact when both ends meet."""

    lower: float
    upper: float
    exact: bool

    @property
    def value(self) -> float:
        return self.upper

    @property
    def phi_lower(self) -> float:
        return float(np.sqrt(self.lower))

    @property
    def phi_upper(self) -> float:
        return float(np.sqrt(self.upper))


def population_phi_sq(cs: CompoundSymmetry, s: int) -> PhiSquaredBound:
    """Exact value (even s) or upper bound (odd s), with the 1-rho lower bound.

    Odd s requires at least one off-support coordinate (r = p - s >= 1);
    even s admits s = p.
    """
    if s < 1 or s > cs.p:
        raise InvalidS(f"need 1 <= s <= p, got s={s}, p={cs.p}")
    low = 1.0 - cs.rho
    if s % 2 == 0:
        return PhiSquaredBound(lower=low, upper=low, exact=True)
    r = cs.p - s
    if r < 1:
        raise InvalidS("odd-s upper bound needs p - s >= 1")
    return PhiSquaredBound(lower=low, upper=low * (1.0 + 1.0 / (s * r)), exact=False)


def witness_vector(cs: CompoundSymmetry, s: int) -> np.ndarray:
    """Feasible vector realizing the Proposition value on S = {0, ..., s-1}."""
    if s < 1 or s > cs.p:
        raise InvalidS(f"need 1 <= s <= p, got s={s}, p={cs.p}")
    p = cs.p
    r = p - s
    v = np.zeros(p)
    if s % 2 == 0:
        half = s // 2
        v[:half] = 1.0 / s
        v[half:s] = -1.0 / s
    else:
        if r < 1:
            raise InvalidS("odd-s witness needs p - s >= 1")
        half = (s - 1) // 2
        v[:half] = 1.0 / s
        v[half:s] = -1.0 / s
        v[s:] = 1.0 / (s * r)
    return v


def quad_form_decomposition(cs: CompoundSymmetry, v: np.ndarray) -> tuple[float, float]:
    """The two terms of v'Sigma_rho v: ((1-rho)|v|^2, rho (sum v)^2)."""
    v = np.asarray(v, dtype=float)
    if v.shape != (cs.p,):
        raise DimensionMismatch(f"expected vector of length {cs.p}, got shape {v.shape}")
    l2_part = (1.0 - cs.rho) * float(v @ v)
    sum_part = cs.rho * float(v.sum()) ** 2
    return l2_part, sum_part
