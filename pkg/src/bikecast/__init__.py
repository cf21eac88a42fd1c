"""Station-level bike-share demand forecasting and starting-inventory optimization.

The package splits into a forecasting side (classical baselines and recurrent
count models built on a small reverse-mode autodiff core) and a prescriptive
side (a finite-capacity double-ended queue whose transient solution prices a
day's lost pickups and returns as a function of the starting inventory),
joined by evaluation tools that measure how forecast quality translates into
decision quality.
"""

from .errors import (
    BikecastError,
    ConfigError,
    DataError,
    DomainError,
    FormatError,
    RowError,
    StageError,
    TrainingError,
)
from .inventory import PenaltyConfig, UdfCurve, oracle_decision, udf, udf_curve
from .queueing import (
    ProbabilityTrajectory,
    RateSeries,
    empty_full_probabilities,
    generator_matrix,
    matrix_exponential_oracle,
    monte_carlo_oracle,
    transient_probabilities,
)

__version__ = "0.1.0"

__all__ = [
    "BikecastError",
    "ConfigError",
    "DataError",
    "DomainError",
    "FormatError",
    "RowError",
    "StageError",
    "TrainingError",
    "PenaltyConfig",
    "UdfCurve",
    "oracle_decision",
    "udf",
    "udf_curve",
    "ProbabilityTrajectory",
    "RateSeries",
    "empty_full_probabilities",
    "generator_matrix",
    "matrix_exponential_oracle",
    "monte_carlo_oracle",
    "transient_probabilities",
    "__version__",
]
