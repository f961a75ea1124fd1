"""Exception and flag types shared across the package."""

from __future__ import annotations

from dataclasses import dataclass


class SkewBasinError(Exception):
    """Base class for all package-specific failures."""


class NonConvergence(SkewBasinError):
    """An iterative solver hit its iteration cap without meeting its residual target."""

    def __init__(self, message: str, iterations: int = -1):
        super().__init__(message)
        self.iterations = iterations


class HypothesisViolation(SkewBasinError):
    """The map does not satisfy a structural hypothesis required by the operation."""


class DegreeDrop(SkewBasinError):
    """The leading coefficient of a fiber polynomial vanished at the given base point."""


class ResonanceDegeneracy(SkewBasinError):
    """A linearization denominator b - a**k is numerically zero at some order k."""

    def __init__(self, message: str, order: int = -1):
        super().__init__(message)
        self.order = order


class OutOfDomain(SkewBasinError):
    """A query point lies outside the domain the estimator is defined on."""


class Disconnected(SkewBasinError):
    """No path exists between the two cells; signals a labeling inconsistency."""


class NoGraphReachable(SkewBasinError):
    """No continued stable graph covers the queried base point.

    Carries a diagnostics dict so callers can distinguish insufficient
    backward depth from insufficient continuation coverage.
    """

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ResourceCap(SkewBasinError):
    """A configured resource limit (node count, memory budget) would be exceeded."""


class ShellEmpty(SkewBasinError):
    """An escape-time shell has no raster support at the working resolution."""

    def __init__(self, message: str, shell: int = -1):
        super().__init__(message)
        self.shell = shell


class ExcessUndecided(SkewBasinError):
    """More than the allowed fraction of cells in the region of interest stayed undecided."""


class ConfigError(SkewBasinError):
    """A run configuration value is missing, malformed, or out of range."""


@dataclass(frozen=True)
class BranchPointProximity:
    """Per-cell continuation flag: the tracked root passed within branch_tol of a
    critical point of the fiber polynomial, so the cell was excluded from the base.
    """

    cell: tuple[int, int]
    derivative_modulus: float
