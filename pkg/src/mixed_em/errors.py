"""Exception hierarchy for mixed_em."""

from __future__ import annotations


class MixedModelError(ValueError):
    """Base class for all input and numerical errors raised by mixed_em."""


class DimensionMismatch(MixedModelError):
    pass


class RankDeficientX(MixedModelError):
    pass


class NonFiniteInput(MixedModelError):
    pass


class EmptyInput(MixedModelError):
    pass


class NumericalFailure(MixedModelError):
    """A factorization broke down (matrix not numerically positive definite)."""


class CriterionMismatch(MixedModelError):
    """Raised when ML and REML quantities would be compared with each other.

    The two log-likelihoods live on different scales (full vs. restricted),
    so a difference between them means nothing.
    """


class BoundaryHit(MixedModelError):
    """The oracle's best point sits on the outer search box.

    The partial result is attached as ``result`` so callers can still inspect it.
    """

    def __init__(self, message: str, result=None):
        super().__init__(message)
        self.result = result


class InvalidSpec(MixedModelError):
    """A simulation spec or run configuration violates its invariants."""
