"""Rank selection: permutation test for the joint rank, information-criterion
grids, and eigenvalue spectra for scree inspection.

Every random replicate gets its own seed derived up front with
`numpy.random.SeedSequence`, so results do not depend on the number of
workers or the order in which joblib finishes them.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Any, Literal

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from projive.core.constants import (
    DEFAULT_ALPHA,
    DEFAULT_MAX_ITERS,
    DEFAULT_N_PERMUTATIONS,
    DEFAULT_TOL,
    MIN_N_PERMUTATIONS,
)
from projive.core.data import BlockRanks, FloatArray, MultiBlockData, NoiseModel
from projive.core.errors import ProjiveError, RankError, ShapeError
from projive.model.em import fit_starts
from projive.model.initialization import InitMethod, strategies_from_name

logger = logging.getLogger(__name__)


# =============================================================================
# Permutation test
# =============================================================================


@dataclass(frozen=True)
class PermTestResult:
    """Outcome of the sequential permutation test for the joint rank.

    Attributes:
        selected_r_j: Number of leading components accepted as joint.
        observed_stats: Canonical correlations between the two blocks' PC scores.
        null_quantiles: Threshold each component was tested against, the (1 - alpha)
            quantile of the largest permuted correlation; equal for every component.
        n_permutations: Replicates in the null.
        alpha: Significance level.
        seed: Seed the replicates were derived from.
        total_ranks: PCA ranks used for each block.
    """

    selected_r_j: int
    observed_stats: tuple[float, ...]
    null_quantiles: tuple[float, ...]
    n_permutations: int
    alpha: float
    seed: int
    total_ranks: tuple[int, int]

    def to_dict(self) -> dict[str, Any]:
        """JSON-friendly form."""
        return {
            "selected_r_j": self.selected_r_j,
            "observed_stats": list(self.observed_stats),
            "null_quantiles": list(self.null_quantiles),
            "n_permutations": self.n_permutations,
            "alpha": self.alpha,
            "seed": self.seed,
            "total_ranks": list(self.total_ranks),
        }

    def to_frame(self) -> pd.DataFrame:
        """One row per tested component."""
        m = len(self.observed_stats)
        return pd.DataFrame(
            {
                "component": np.arange(1, m + 1),
                "canonical_correlation": self.observed_stats,
                "null_quantile": self.null_quantiles,
                "joint": np.arange(m) < self.selected_r_j,
            }
        )


def pc_score_basis(block: FloatArray, rank: int) -> FloatArray:
    """Orthonormal basis of the leading `rank` PC scores of a block, (n, rank).

    Features are centered first, so the basis is orthogonal to the constant vector.
    """
    centered = block - block.mean(axis=1, keepdims=True)
    u, _, _ = np.linalg.svd(centered.T, full_matrices=False)
    return u[:, :rank]


def canonical_correlations(u1: FloatArray, u2: FloatArray) -> FloatArray:
    """Canonical correlations of two orthonormal score bases, descending, in [0, 1]."""
    return np.clip(np.linalg.svd(u1.T @ u2, compute_uv=False), 0.0, 1.0)


def _permuted_stats(u1: FloatArray, u2: FloatArray, seed: np.random.SeedSequence) -> FloatArray:
    perm = np.random.default_rng(seed).permutation(u2.shape[0])
    return canonical_correlations(u1, u2[perm])


def permutation_joint_rank(
    data: MultiBlockData,
    total_ranks: tuple[int, int],
    n_perm: int = DEFAULT_N_PERMUTATIONS,
    alpha: float = DEFAULT_ALPHA,
    seed: int = 0,
    *,
    n_jobs: int = 1,
) -> PermTestResult:
    """Select the joint rank of two blocks by permuting subjects of block 2.

    Component m is accepted while its observed canonical correlation exceeds
    the (1 - alpha) quantile of the largest correlation under permutation;
    the first failure stops the sequence. Every component faces the same
    threshold.

    Args:
        data: Two blocks.
        total_ranks: PCA rank r_J + r_Ik retained for each block.
        n_perm: Permutations (at least MIN_N_PERMUTATIONS).
        alpha: Significance level in (0, 1).
        seed: Root seed of the permutations.
        n_jobs: joblib workers for the permutation replicates.

    Returns:
        The test result.

    Raises:
        ShapeError: If data does not have exactly 2 blocks, or n < 4.
        RankError: If a total rank is not in [1, min(p_k, n)).
        ValueError: If n_perm or alpha is out of range.
    """
    if data.n_blocks != 2:
        msg = f"The permutation test compares exactly 2 blocks, got {data.n_blocks}"
        raise ShapeError(msg)
    n = data.n_subjects
    if n < 4:
        msg = f"The permutation test needs at least 4 subjects, got {n}"
        raise ShapeError(msg)
    if n_perm < MIN_N_PERMUTATIONS:
        msg = f"n_perm must be at least {MIN_N_PERMUTATIONS}, got {n_perm}"
        raise ValueError(msg)
    if not 0 < alpha < 1:
        msg = f"alpha must lie in (0, 1), got {alpha}"
        raise ValueError(msg)
    for k, (rank, p) in enumerate(zip(total_ranks, data.dims, strict=True)):
        if not 1 <= rank < min(p, n):
            msg = f"Block {k}: total rank {rank} must be in [1, min(p_k, n)) = [1, {min(p, n)})"
            raise RankError(msg)

    u1 = pc_score_basis(data.blocks[0], total_ranks[0])
    u2 = pc_score_basis(data.blocks[1], total_ranks[1])
    observed = canonical_correlations(u1, u2)

    children = np.random.SeedSequence(seed).spawn(n_perm)
    null_rows = Parallel(n_jobs=n_jobs)(delayed(_permuted_stats)(u1, u2, child) for child in children)
    null = np.vstack(null_rows)
    threshold = float(np.quantile(null[:, 0], 1.0 - alpha))
    quantiles = np.full(observed.shape, threshold)

    selected = 0
    for stat in observed:
        if stat <= threshold:
            break
        selected += 1
    logger.info("Permutation test selected r_J = %d (observed %s)", selected, np.round(observed, 4))

    return PermTestResult(
        selected_r_j=selected,
        observed_stats=tuple(float(x) for x in observed),
        null_quantiles=tuple(float(x) for x in quantiles),
        n_permutations=n_perm,
        alpha=alpha,
        seed=seed,
        total_ranks=(int(total_ranks[0]), int(total_ranks[1])),
    )


# =============================================================================
# Information criteria
# =============================================================================


@dataclass(frozen=True)
class IcEntry:
    """One candidate of an information-criterion grid.

    Failed fits keep NaN criteria and the error message.
    """

    ranks: BlockRanks
    aic: float
    bic: float
    loglik: float
    converged: bool
    iterations: int = 0
    error: str | None = None

    @property
    def ok(self) -> bool:
        """Whether the fit succeeded."""
        return self.error is None


@dataclass(frozen=True)
class IcGrid:
    """Information criteria for a list of candidate ranks, in input order."""

    entries: tuple[IcEntry, ...] = field(default_factory=tuple)

    def best(self, criterion: Literal["aic", "bic"] = "bic") -> IcEntry:
        """Successful entry with the smallest criterion; earliest wins ties.

        Raises:
            ProjiveError: If every fit failed.
        """
        candidates = [e for e in self.entries if e.ok]
        if not candidates:
            msg = "No candidate ranks could be fit"
            raise ProjiveError(msg)
        return min(candidates, key=lambda e: getattr(e, criterion))

    def to_frame(self) -> pd.DataFrame:
        """One row per candidate."""
        return pd.DataFrame(
            [
                {
                    "ranks": str(e.ranks),
                    "r_j": e.ranks.r_j,
                    "loglik": e.loglik,
                    "aic": e.aic,
                    "bic": e.bic,
                    "converged": e.converged,
                    "iterations": e.iterations,
                    "error": e.error or "",
                }
                for e in self.entries
            ]
        )


def candidate_seed(seed: int, ranks: BlockRanks) -> int:
    """Seed for one grid candidate, keyed by its ranks rather than its position."""
    sequence = np.random.SeedSequence([seed, ranks.r_j, *ranks.r_i])
    return int(sequence.generate_state(1)[0])


def _fit_candidate(
    data: MultiBlockData,
    ranks: BlockRanks,
    init: InitMethod,
    noise_model: NoiseModel,
    tol: float,
    max_iters: int,
    seed: int,
) -> IcEntry:
    strategies = strategies_from_name(init, candidate_seed(seed, ranks))
    try:
        result = fit_starts(data, ranks, strategies, noise_model, tol, max_iters, source=f"ic_grid[{ranks}]")
    except ProjiveError as e:
        logger.warning("Candidate %s failed: %s", ranks, e)
        return IcEntry(ranks=ranks, aic=math.nan, bic=math.nan, loglik=math.nan, converged=False, error=str(e))
    return IcEntry(
        ranks=ranks,
        aic=result.aic,
        bic=result.bic,
        loglik=result.final_loglik,
        converged=result.converged,
        iterations=result.iterations,
    )


def ic_grid(
    data: MultiBlockData,
    candidate_ranks: Sequence[BlockRanks],
    *,
    init: InitMethod | str = InitMethod.CHOLESKY,
    noise_model: NoiseModel | str = NoiseModel.ISOTROPIC,
    tol: float = DEFAULT_TOL,
    max_iters: int = DEFAULT_MAX_ITERS,
    seed: int = 0,
    n_jobs: int = 1,
) -> IcGrid:
    """Fit every candidate with identical options and record AIC/BIC.

    Individual failures are recorded in their entry and do not stop the grid.

    Raises:
        ValueError: If no candidates are given.
    """
    if not candidate_ranks:
        msg = "ic_grid needs at least one candidate"
        raise ValueError(msg)
    init = InitMethod(init)
    noise_model = NoiseModel(noise_model)
    entries = Parallel(n_jobs=n_jobs)(
        delayed(_fit_candidate)(data, ranks, init, noise_model, tol, max_iters, seed) for ranks in candidate_ranks
    )
    return IcGrid(entries=tuple(entries))


# =============================================================================
# Scree export
# =============================================================================


def eigen_spectrum(data: MultiBlockData) -> tuple[FloatArray, ...]:
    """Descending eigenvalues of every block's sample covariance.

    Features are centered and the covariance uses divisor n - 1, so each
    block yields min(p_k, n - 1) non-negative values.

    Raises:
        ShapeError: If n < 2.
    """
    n = data.n_subjects
    if n < 2:
        msg = f"Need at least 2 subjects for a sample covariance, got {n}"
        raise ShapeError(msg)
    spectra: list[FloatArray] = []
    for block in data.blocks:
        centered = block - block.mean(axis=1, keepdims=True)
        s = np.linalg.svd(centered, compute_uv=False)
        keep = min(block.shape[0], n - 1)
        spectra.append(np.clip(s[:keep] ** 2 / (n - 1), 0.0, None))
    return tuple(spectra)


def spectrum_frame(spectra: Sequence[FloatArray]) -> pd.DataFrame:
    """Long-format table (block, component, eigenvalue) for plotting."""
    rows = [
        {"block": k + 1, "component": j + 1, "eigenvalue": float(value)}
        for k, values in enumerate(spectra)
        for j, value in enumerate(values)
    ]
    return pd.DataFrame(rows, columns=["block", "component", "eigenvalue"])
