"""Numerical tolerances and defaults shared across the package.

Every threshold that more than one module compares against lives here so the
EM engine, the metrics, and the simulation harness agree on what "zero",
"singular" and "full rank" mean.
"""

from __future__ import annotations

from typing import Final

# =============================================================================
# Linear-algebra tolerances
# =============================================================================

#: Relative tolerance for numerical rank: a singular value counts when it
#: exceeds this multiple of the largest singular value.
RANK_TOLERANCE: Final[float] = 1e-10

#: Smallest admissible noise variance. Constructing parameters below it is an
#: error; EM updates that land below it are clamped with a warning.
VARIANCE_FLOOR: Final[float] = 1e-12

#: Starting noise variances are at least this fraction of the block's mean
#: sample variance, so exactly low-rank blocks still give a finite start.
START_NOISE_FRACTION: Final[float] = 1e-8

#: A symmetric matrix is treated as singular when its smallest eigenvalue is
#: below this multiple of its largest one.
SINGULARITY_TOLERANCE: Final[float] = 1e-12

#: Slack allowed on each EM step before a decrease in log-likelihood is
#: reported as a defect, scaled by (|loglik| + 1).
MONOTONICITY_SLACK: Final[float] = 1e-8

#: Features whose mean exceeds this magnitude make `fit` warn that the data
#: were not centered.
CENTERING_TOLERANCE: Final[float] = 1e-6

# =============================================================================
# Fitting defaults
# =============================================================================

#: Relative log-likelihood change that stops EM.
DEFAULT_TOL: Final[float] = 1e-8

#: Iteration cap for EM.
DEFAULT_MAX_ITERS: Final[int] = 5000

# =============================================================================
# Rank selection defaults
# =============================================================================

#: Permutations used to build the joint-rank null distribution.
DEFAULT_N_PERMUTATIONS: Final[int] = 199

#: Minimum number of permutations accepted by the permutation test.
MIN_N_PERMUTATIONS: Final[int] = 19

#: Significance level of the sequential permutation test.
DEFAULT_ALPHA: Final[float] = 0.05

# =============================================================================
# Output
# =============================================================================

#: printf format for numeric CSV output; 17 significant digits round-trip
#: IEEE doubles exactly.
CSV_FLOAT_FORMAT: Final[str] = "%.17g"
