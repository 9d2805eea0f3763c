"""EM engine: likelihood, E/M steps, initialization and the fitting loop."""

from projive.model.em import (
    FitResult,
    ScoreGroups,
    TerminationReason,
    extract_scores,
    fit,
    fit_multistart,
    fit_starts,
)
from projive.model.initialization import (
    Cholesky,
    InitMethod,
    InitStrategy,
    Provided,
    RandomNormal,
    estimate_noise_variance,
    initialize,
    strategies_from_name,
)
from projive.model.likelihood import count_parameters, information_criteria, log_likelihood
from projive.model.steps import PosteriorScores, e_step, m_step

__all__ = [
    "Cholesky",
    "FitResult",
    "InitMethod",
    "InitStrategy",
    "PosteriorScores",
    "Provided",
    "RandomNormal",
    "ScoreGroups",
    "TerminationReason",
    "count_parameters",
    "e_step",
    "estimate_noise_variance",
    "extract_scores",
    "fit",
    "fit_multistart",
    "fit_starts",
    "information_criteria",
    "initialize",
    "log_likelihood",
    "m_step",
    "strategies_from_name",
]
