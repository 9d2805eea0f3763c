"""Feature preprocessing before a fit.

The pipeline residualizes every feature on an intercept plus covariates, then
centers it and optionally scales it to unit sample variance (divisor n - 1).
`fit` never standardizes on its own; call `preprocess` explicitly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike
from scipy import linalg

from projive.core.constants import RANK_TOLERANCE
from projive.core.data import FloatArray, MultiBlockData
from projive.core.errors import PreprocessError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PreprocessReport:
    """What preprocessing removed, enough to undo it.

    Attributes:
        means: Per block, the removed feature means.
        scales: Per block, the feature standard deviations divided out (ones if unscaled).
        covariate_coeffs: Per block, regression coefficients of shape (q + 1, p_k)
            for [intercept | covariates], or None without residualization.
        scaled: Whether unit-variance scaling was applied.
    """

    means: tuple[FloatArray, ...]
    scales: tuple[FloatArray, ...]
    covariate_coeffs: tuple[FloatArray, ...] | None = None
    scaled: bool = True

    def __post_init__(self) -> None:
        """Validate that scales are strictly positive."""
        if any(np.any(s <= 0) for s in self.scales):
            msg = "Preprocessing scales must be strictly positive"
            raise PreprocessError(msg)


def _design(covariates: ArrayLike, n: int) -> FloatArray:
    """[1 | covariates], validated for shape and column rank."""
    cov = np.asarray(covariates, dtype=np.float64)
    if cov.ndim == 1:
        cov = cov[:, None]
    if cov.ndim != 2 or cov.shape[0] != n:
        msg = f"Covariates must have {n} rows, got shape {cov.shape}"
        raise PreprocessError(msg)
    if not np.all(np.isfinite(cov)):
        msg = "Covariates contain NaN or infinite entries"
        raise PreprocessError(msg)
    design = np.hstack([np.ones((n, 1)), cov])
    if design.shape[1] >= n:
        msg = f"Need q + 1 < n for residualization, got q = {cov.shape[1]}, n = {n}"
        raise PreprocessError(msg)
    return design


def _residualize(data: MultiBlockData, covariates: ArrayLike) -> tuple[MultiBlockData, tuple[FloatArray, ...]]:
    design = _design(covariates, data.n_subjects)
    q, r = linalg.qr(design, mode="economic")
    diag = np.abs(np.diag(r))
    if diag.min() <= RANK_TOLERANCE * diag.max():
        msg = "Covariates are rank deficient once an intercept is added"
        raise PreprocessError(msg)

    blocks: list[FloatArray] = []
    coeffs: list[FloatArray] = []
    for block in data.blocks:
        qtx = q.T @ block.T
        coeffs.append(linalg.solve_triangular(r, qtx))
        blocks.append(block - (q @ qtx).T)
    return data.with_blocks(blocks), tuple(coeffs)


def residualize(data: MultiBlockData, covariates: ArrayLike) -> MultiBlockData:
    """Replace every feature by its least-squares residual on [1 | covariates].

    Args:
        data: Observations, features x subjects.
        covariates: (n, q) matrix with rows in subject order; q may be 0.

    Returns:
        Residualized data.

    Raises:
        PreprocessError: If covariates are misshapen or rank deficient, or q + 1 >= n.
    """
    return _residualize(data, covariates)[0]


def center_and_scale(data: MultiBlockData, *, scale: bool = True) -> tuple[MultiBlockData, PreprocessReport]:
    """Center every feature and optionally scale it to unit sample variance.

    Args:
        data: Observations.
        scale: Divide by the sample standard deviation (divisor n - 1).

    Returns:
        (processed data, report).

    Raises:
        PreprocessError: If n < 2, or a feature is constant and scaling is requested.
    """
    n = data.n_subjects
    if n < 2:
        msg = f"Need at least 2 subjects to center and scale, got {n}"
        raise PreprocessError(msg)

    blocks: list[FloatArray] = []
    means: list[FloatArray] = []
    scales: list[FloatArray] = []
    for k, block in enumerate(data.blocks):
        mean = block.mean(axis=1)
        centered = block - mean[:, None]
        if scale:
            sd = centered.std(axis=1, ddof=1)
            constant = sd <= 1e-12 * np.maximum(1.0, np.abs(mean))
            if np.any(constant):
                j = int(np.flatnonzero(constant)[0])
                msg = f"Cannot scale {data.feature_label(k, j)}: it has zero variance"
                raise PreprocessError(msg)
            centered = centered / sd[:, None]
        else:
            sd = np.ones_like(mean)
        blocks.append(centered)
        means.append(mean)
        scales.append(sd)
    report = PreprocessReport(means=tuple(means), scales=tuple(scales), scaled=scale)
    return data.with_blocks(blocks), report


def preprocess(
    data: MultiBlockData,
    covariates: ArrayLike | None = None,
    *,
    scale: bool = True,
) -> tuple[MultiBlockData, PreprocessReport]:
    """Residualize on covariates (if any), then center and scale.

    Returns:
        (processed data, report including covariate coefficients).
    """
    coeffs: tuple[FloatArray, ...] | None = None
    if covariates is not None:
        data, coeffs = _residualize(data, covariates)
        logger.info("Residualized %d blocks on %d covariate column(s)", data.n_blocks, coeffs[0].shape[0] - 1)
    processed, report = center_and_scale(data, scale=scale)
    return processed, PreprocessReport(
        means=report.means,
        scales=report.scales,
        covariate_coeffs=coeffs,
        scaled=scale,
    )


def inverse_transform(
    data: MultiBlockData,
    report: PreprocessReport,
    covariates: ArrayLike | None = None,
) -> MultiBlockData:
    """Undo `preprocess` / `center_and_scale`.

    Raises:
        PreprocessError: If the report holds covariate coefficients but no covariates are given.
    """
    blocks = [
        block * s[:, None] + m[:, None]
        for block, m, s in zip(data.blocks, report.means, report.scales, strict=True)
    ]
    if report.covariate_coeffs is not None:
        if covariates is None:
            msg = "Covariates are required to undo residualization"
            raise PreprocessError(msg)
        design = _design(covariates, data.n_subjects)
        blocks = [b + (design @ c).T for b, c in zip(blocks, report.covariate_coeffs, strict=True)]
    return data.with_blocks(blocks)
