"""Exception hierarchy shared by every module in the package."""


class CompatKitError(Exception):
    """Base class for all package-specific errors."""


class NonFiniteInput(CompatKitError):
    """Input array contains NaN or infinite entries."""


class ZeroVarianceColumn(CompatKitError):
    """A design-matrix column is constant and cannot be standardized."""

    def __init__(self, column: int):
        self.column = column
        super().__init__(f"column {column} has zero variance")


class DimensionMismatch(CompatKitError):
    """Array shapes are inconsistent with each other."""


class NumericalBreakdown(CompatKitError):
    """An iterate became non-finite inside a solver."""


class ActiveSetTooLarge(CompatKitError):
    """Sign enumeration refused because 2^(s-1) exceeds the configured cap."""

    def __init__(self, s: int, s_max: int):
        self.s = s
        self.s_max = s_max
        super().__init__(
            f"active set size s={s} exceeds s_max={s_max}; "
            f"use the branch-and-bound solver for large supports"
        )


class SolverFailure(CompatKitError):
    """An inner QP solve did not produce a usable solution."""


class InvalidConfig(CompatKitError):
    """A configuration object violates its own invariants."""


class InvalidS(CompatKitError):
    """Support size s is outside the range a closed-form bound requires."""


class InvalidDelta(CompatKitError):
    """Confidence parameter delta must lie strictly inside (0, 1)."""


class DegreesOfFreedomExhausted(CompatKitError):
    """n - s_cv - 1 < 1, so the unbiased variance estimator is undefined."""


class DegenerateFold(CompatKitError):
    """A cross-validation fold has fewer than two observations."""


class EmptySignal(CompatKitError):
    """The pipeline degenerated (zero response or empty support)."""


class PrefixTooSmall(CompatKitError):
    """A requested data prefix is too short to standardize and solve."""


class InputDataError(CompatKitError):
    """An input file could not be parsed into the expected structure."""
