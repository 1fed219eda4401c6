"""EM estimation of variance components in one-way linear mixed models.

ML and REML share every Henderson solve; they differ only in the trace
adjustments of the variance-component update.
"""

from .em import EmConfig, FitResult, em_step, fit, ols_fixed_point, trace_adjustments
from .errors import (
    BoundaryHit,
    CriterionMismatch,
    DimensionMismatch,
    EmptyInput,
    MixedModelError,
    NonFiniteInput,
    NumericalFailure,
    RankDeficientX,
)
from .model import (
    Criterion,
    ModelData,
    SimulationSpec,
    VarianceComponents,
    simulate,
    validate_model,
    z_from_groups,
)

__version__ = "0.1.0"
