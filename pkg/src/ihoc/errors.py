"""Exception types shared across the toolkit."""

from __future__ import annotations


class IhocError(Exception):
    """Base class for all toolkit errors."""


class DimensionMismatch(IhocError):
    """Array shapes disagree with the declared state/control dimensions."""


class NonFiniteValue(IhocError):
    """An evaluation produced NaN or infinity."""


class PointNotInSet(IhocError):
    """A point required to lie in a convex set does not (up to tolerance)."""


class UnboundedSet(IhocError):
    """A support-function LP is unbounded in the requested direction."""


class DomainViolation(IhocError):
    """Problem data leaves the domain where a catalog family is defined."""


class NoConvergence(IhocError):
    """A fixed-point or Riccati iteration failed to reach its tolerance."""


class InfeasibleSubproblem(IhocError):
    """The augmented-Lagrangian loop drove the penalty to its cap without
    restoring feasibility."""


class IndexMismatch(IhocError):
    """A multiplier path and a process window cover different horizons."""


class MarginZero(IhocError):
    """A surjectivity margin needed by the costate norm bounds is zero, so
    the forward bound at that stage is undefined."""


class TangentConeViolation(IhocError):
    """A supplied generator is not a tangent direction at the given point."""


class NormalizationError(IhocError):
    """A multiplier path cannot be normalized (zero scale at the anchor)."""


class ConditionViolation(IhocError):
    """A first-order condition fails beyond tolerance during extraction.

    Carries the condition name, the stage where the worst violation
    occurred, and the residual value.
    """

    def __init__(self, condition: str, stage: int, residual: float):
        self.condition = condition
        self.stage = stage
        self.residual = float(residual)
        super().__init__(
            f"condition '{condition}' violated at stage {stage}: "
            f"residual {residual:.3e}"
        )


class ConfigError(IhocError):
    """A run configuration is malformed.

    ``field`` is a dotted path into the offending entry, e.g.
    ``problem.stages.dynamics.name``.
    """

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")
