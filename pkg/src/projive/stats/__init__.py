"""Preprocessing, recovery metrics and rank selection."""

from projive.stats.metrics import (
    FittedComponents,
    RecoveryReport,
    chordal_norm,
    compare_components,
    principal_angles,
    recovery_rows,
    score_recovery,
    summarize_recovery,
    variance_explained,
)
from projive.stats.preprocess import (
    PreprocessReport,
    center_and_scale,
    inverse_transform,
    preprocess,
    residualize,
)
from projive.stats.rank_select import (
    IcEntry,
    IcGrid,
    PermTestResult,
    eigen_spectrum,
    ic_grid,
    permutation_joint_rank,
)

__all__ = [
    # Preprocessing
    "PreprocessReport",
    "center_and_scale",
    "inverse_transform",
    "preprocess",
    "residualize",
    # Metrics
    "FittedComponents",
    "RecoveryReport",
    "chordal_norm",
    "compare_components",
    "principal_angles",
    "recovery_rows",
    "score_recovery",
    "summarize_recovery",
    "variance_explained",
    # Rank selection
    "IcEntry",
    "IcGrid",
    "PermTestResult",
    "eigen_spectrum",
    "ic_grid",
    "permutation_joint_rank",
]
