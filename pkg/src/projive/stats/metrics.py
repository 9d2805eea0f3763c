"""Subspace recovery metrics.

The main measure is the scaled chordal norm between two column spaces:

    delta*(F1, F2) = sqrt(sum_m sin^2 theta_m) / q,   q = min(rank F1, rank F2)

where theta_1..theta_q are the principal angles. It is 0 for identical
subspaces and depends on F1, F2 only through their column spaces.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Any

import numpy as np
import pandas as pd
from numpy.typing import ArrayLike

from projive.core.constants import RANK_TOLERANCE
from projive.core.data import FloatArray
from projive.core.errors import RankError, ShapeError
from projive.model.em import FitResult, extract_scores
from projive.model.storage import load_fit

if TYPE_CHECKING:
    from projive.simulation.scenarios import SimTruth

logger = logging.getLogger(__name__)


def _as_matrix(f: ArrayLike, name: str) -> FloatArray:
    arr = np.asarray(f, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        msg = f"{name} must be a vector or matrix, got shape {arr.shape}"
        raise ShapeError(msg)
    return arr


def orthonormal_basis(f: ArrayLike, tol: float = RANK_TOLERANCE) -> FloatArray:
    """Orthonormal basis of the column space at numerical rank.

    A singular value counts when it exceeds tol times the largest one.

    Raises:
        RankError: If f is zero.
    """
    arr = _as_matrix(f, "matrix")
    u, s, _ = np.linalg.svd(arr, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        msg = f"Cannot take the column space of a zero matrix of shape {arr.shape}"
        raise RankError(msg)
    rank = int(np.sum(s > tol * s[0]))
    return u[:, :rank]


def _bases(f1: ArrayLike, f2: ArrayLike) -> tuple[FloatArray, FloatArray]:
    """Bases ordered (wider, narrower)."""
    a = _as_matrix(f1, "f1")
    b = _as_matrix(f2, "f2")
    if a.shape[0] != b.shape[0]:
        msg = f"Subspaces live in different spaces: {a.shape[0]} vs {b.shape[0]} rows"
        raise ShapeError(msg)
    qa, qb = orthonormal_basis(a), orthonormal_basis(b)
    return (qa, qb) if qa.shape[1] >= qb.shape[1] else (qb, qa)


def _sines(wide: FloatArray, narrow: FloatArray) -> FloatArray:
    """Sines of the principal angles, ascending.

    Taken from the part of the narrower basis orthogonal to the wider one,
    which stays accurate for nearly identical subspaces.
    """
    residual = narrow - wide @ (wide.T @ narrow)
    s = np.linalg.svd(residual, compute_uv=False)[::-1]
    return np.clip(s, 0.0, 1.0)


def principal_angles(f1: ArrayLike, f2: ArrayLike) -> FloatArray:
    """Principal angles in radians between the column spaces, ascending.

    Returns q = min(rank f1, rank f2) angles. Small angles come from sines,
    large ones from cosines of the singular values of Q1^T Q2.
    """
    wide, narrow = _bases(f1, f2)
    cos = np.clip(np.linalg.svd(wide.T @ narrow, compute_uv=False), 0.0, 1.0)
    sin = _sines(wide, narrow)
    return np.where(cos * cos < 0.5, np.arccos(cos), np.arcsin(sin))


def chordal_norm(f1: ArrayLike, f2: ArrayLike) -> float:
    """Scaled chordal norm between the column spaces of f1 and f2.

    Args:
        f1: Matrix (or vector) whose columns span the first subspace.
        f2: Matrix (or vector) with the same number of rows.

    Returns:
        sqrt(sum of squared principal-angle sines) / q, in [0, 1].

    Raises:
        ShapeError: If the row counts differ.
        RankError: If either argument is a zero matrix.
    """
    wide, narrow = _bases(f1, f2)
    q = narrow.shape[1]
    sin = _sines(wide, narrow)
    return math.sqrt(float(np.sum(sin * sin))) / q


# =============================================================================
# Recovery of fitted components
# =============================================================================


@dataclass(frozen=True)
class FittedComponents:
    """Score and loading matrices of a decomposition, fitted or true.

    Attributes:
        joint_scores: (n, r_J).
        indiv_scores: Per block, (n, r_Ik).
        joint_loadings: Per block, (p_k, r_J).
        indiv_loadings: Per block, (p_k, r_Ik).
    """

    joint_scores: FloatArray
    indiv_scores: tuple[FloatArray, ...]
    joint_loadings: tuple[FloatArray, ...]
    indiv_loadings: tuple[FloatArray, ...]

    @property
    def n_blocks(self) -> int:
        """Number of blocks."""
        return len(self.joint_loadings)

    @classmethod
    def from_result(cls, result: FitResult) -> FittedComponents:
        """Posterior mean scores and fitted loadings of a fit."""
        groups = extract_scores(result)
        return cls(
            joint_scores=groups.joint,
            indiv_scores=groups.individual,
            joint_loadings=result.params.w_joint,
            indiv_loadings=result.params.w_indiv,
        )

    @classmethod
    def from_directory(cls, directory: str | Path) -> FittedComponents:
        """Components from a fit output directory."""
        loaded = load_fit(directory)
        return cls(
            joint_scores=loaded.joint_scores,
            indiv_scores=loaded.indiv_scores,
            joint_loadings=loaded.params.w_joint,
            indiv_loadings=loaded.params.w_indiv,
        )

    @classmethod
    def from_truth(cls, truth: SimTruth) -> FittedComponents:
        """True generating components of a simulation."""
        return cls(
            joint_scores=truth.joint_scores,
            indiv_scores=truth.indiv_scores,
            joint_loadings=truth.joint_loadings,
            indiv_loadings=truth.indiv_loadings,
        )


@dataclass(frozen=True)
class RecoveryReport:
    """Scaled chordal norms between estimated and true subspaces.

    Entries are NaN where either side has no columns (a zero rank).

    Attributes:
        joint_score_dist: Joint scores.
        joint_load_dist: Joint loadings per block.
        indiv_score_dist: Individual scores per block.
        indiv_load_dist: Individual loadings per block.
    """

    joint_score_dist: float
    joint_load_dist: tuple[float, ...]
    indiv_score_dist: tuple[float, ...]
    indiv_load_dist: tuple[float, ...]

    def as_dict(self) -> dict[str, float]:
        """Flat mapping metric name -> value (blocks numbered from 1)."""
        out = {"joint_scores": self.joint_score_dist}
        for k, value in enumerate(self.joint_load_dist):
            out[f"joint_loadings_{k + 1}"] = value
        for k, value in enumerate(self.indiv_score_dist):
            out[f"indiv_scores_{k + 1}"] = value
        for k, value in enumerate(self.indiv_load_dist):
            out[f"indiv_loadings_{k + 1}"] = value
        return out


def _distance(estimate: FloatArray, truth: FloatArray) -> float:
    if estimate.shape[0] != truth.shape[0]:
        msg = f"Estimated and true components have {estimate.shape[0]} and {truth.shape[0]} rows"
        raise ShapeError(msg)
    if estimate.shape[1] == 0 or truth.shape[1] == 0:
        return math.nan
    return chordal_norm(estimate, truth)


def compare_components(estimate: FittedComponents, truth: FittedComponents) -> RecoveryReport:
    """Chordal norms for every component group of two decompositions.

    Ranks may differ between estimate and truth; each norm uses q = min rank.

    Raises:
        ShapeError: If block counts or row counts differ.
    """
    if estimate.n_blocks != truth.n_blocks:
        msg = f"Estimate has {estimate.n_blocks} blocks, truth has {truth.n_blocks}"
        raise ShapeError(msg)
    blocks = range(truth.n_blocks)
    return RecoveryReport(
        joint_score_dist=_distance(estimate.joint_scores, truth.joint_scores),
        joint_load_dist=tuple(_distance(estimate.joint_loadings[k], truth.joint_loadings[k]) for k in blocks),
        indiv_score_dist=tuple(_distance(estimate.indiv_scores[k], truth.indiv_scores[k]) for k in blocks),
        indiv_load_dist=tuple(_distance(estimate.indiv_loadings[k], truth.indiv_loadings[k]) for k in blocks),
    )


def score_recovery(result: FitResult, truth: SimTruth) -> RecoveryReport:
    """Compare a fit with the simulation that generated its data."""
    return compare_components(FittedComponents.from_result(result), FittedComponents.from_truth(truth))


def variance_explained(truth: SimTruth) -> tuple[tuple[float, float], ...]:
    """Per block (R^2_J, R^2_I) recomputed from the stored matrices.

    Raises:
        ValueError: If a data block is identically zero.
    """
    shares: list[tuple[float, float]] = []
    for k, block in enumerate(truth.data.blocks):
        total = float(np.sum(block * block))
        if total == 0:
            msg = f"Block {k} is identically zero; variance explained is undefined"
            raise ValueError(msg)
        joint = float(np.sum(truth.joint_matrices[k] ** 2))
        indiv = float(np.sum(truth.indiv_matrices[k] ** 2))
        shares.append((joint / total, indiv / total))
    return tuple(shares)


# =============================================================================
# Tables
# =============================================================================


def recovery_rows(report: RecoveryReport, labels: Mapping[str, Any] | None = None) -> list[dict[str, Any]]:
    """Long-format rows, one per metric, each carrying the given labels."""
    base = dict(labels or {})
    return [{**base, "metric": metric, "value": value} for metric, value in report.as_dict().items()]


def summarize_recovery(
    frame: pd.DataFrame,
    by: Sequence[str] = ("scenario", "method"),
    *,
    digits: int = 2,
) -> pd.DataFrame:
    """Mean and SD of every metric per group, plus an "m (sd)" column.

    Args:
        frame: Long-format rows from `recovery_rows` with a "value" column.
        by: Grouping columns besides "metric"; missing ones are ignored.
        digits: Decimals in the formatted summary.

    Returns:
        One row per group and metric with columns mean, sd, count and summary.
    """
    keys = [c for c in by if c in frame.columns] + ["metric"]
    grouped = frame.groupby(keys, sort=True, dropna=False)["value"]
    table = grouped.agg(mean="mean", sd="std", count="count").reset_index()
    table["summary"] = [
        f"{m:.{digits}f} ({0.0 if pd.isna(s) else s:.{digits}f})"
        for m, s in zip(table["mean"], table["sd"], strict=True)
    ]
    return table
