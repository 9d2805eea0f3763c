"""Observed-data log-likelihood and information criteria.

The marginal covariance C = W W^T + D is p x p, but W has only r columns and
D is diagonal, so everything here works through the r x r capacitance matrix
M = I_r + W^T D^-1 W (Woodbury):

    C^-1      = D^-1 - D^-1 W M^-1 W^T D^-1
    log|C|    = sum(log d) + log|M|

The same factorization also gives the posterior moments used by the E-step.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from projive.core.constants import SINGULARITY_TOLERANCE
from projive.core.data import BlockRanks, FloatArray, MultiBlockData, NoiseModel, ProjiveParams
from projive.core.errors import ShapeError, SingularMatrixError
from projive.core.layout import StackedLayout, assemble_w

logger = logging.getLogger(__name__)

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class CovarianceFactor:
    """Woodbury factorization of C = W W^T + D.

    Attributes:
        w: Assembled loading matrix, (p_total, r_total).
        d: Diagonal of D, (p_total,).
        chol: Lower Cholesky factor of M = I + W^T D^-1 W.
        logdet: log|C|.
    """

    w: FloatArray
    d: FloatArray
    chol: FloatArray
    logdet: float

    @property
    def r_total(self) -> int:
        """Latent dimension."""
        return int(self.w.shape[1])

    def whitened_projection(self, x: FloatArray) -> FloatArray:
        """W^T D^-1 x for a (p_total, n) array, shape (r_total, n)."""
        return self.w.T @ (x / self.d[:, None])

    def posterior_cov(self) -> FloatArray:
        """M^-1 = I - W^T C^-1 W."""
        if self.r_total == 0:
            return np.zeros((0, 0))
        cov = linalg.cho_solve((self.chol, True), np.eye(self.r_total))
        return 0.5 * (cov + cov.T)


def check_data_matches(data: MultiBlockData, params: ProjiveParams) -> None:
    """Raise ShapeError unless data and params have the same block dims."""
    if data.dims != params.dims:
        msg = f"Data block dims {data.dims} do not match parameter dims {params.dims}"
        raise ShapeError(msg)


def factor_covariance(params: ProjiveParams) -> CovarianceFactor:
    """Factor the model covariance of params.

    C is declared singular when the cheap eigenvalue bounds
    lambda_min(C) >= min(d) and lambda_max(C) <= max(d) + ||W||_2^2
    cannot rule out lambda_min < SINGULARITY_TOLERANCE * lambda_max.

    Raises:
        SingularMatrixError: If C is numerically singular.
    """
    w = assemble_w(params, StackedLayout.from_params(params))
    d = params.noise_vector()
    wtw_norm = float(np.linalg.eigvalsh(w.T @ w)[-1]) if w.shape[1] else 0.0
    if d.min() < SINGULARITY_TOLERANCE * (d.max() + wtw_norm):
        msg = (
            f"Model covariance is numerically singular: smallest noise variance {d.min():.3g} "
            f"against largest covariance scale {d.max() + wtw_norm:.3g}"
        )
        raise SingularMatrixError(msg)

    m = np.eye(w.shape[1]) + w.T @ (w / d[:, None])
    if m.shape[0] == 0:
        return CovarianceFactor(w=w, d=d, chol=m, logdet=float(np.sum(np.log(d))))
    try:
        chol = linalg.cholesky(0.5 * (m + m.T), lower=True)
    except linalg.LinAlgError as e:
        msg = "Capacitance matrix I + W^T D^-1 W is not positive definite"
        raise SingularMatrixError(msg) from e
    logdet = float(np.sum(np.log(d)) + 2.0 * np.sum(np.log(np.diag(chol))))
    return CovarianceFactor(w=w, d=d, chol=chol, logdet=logdet)


def log_likelihood(data: MultiBlockData, params: ProjiveParams) -> float:
    """Observed-data log-likelihood of the stacked model.

    Computes -(n/2) {log|2 pi C| + tr(C^-1 S)} with S = (1/n) sum_i x_i x_i^T.
    S itself is never formed or inverted, so n < p_total is fine.

    Args:
        data: Observations; expected to be centered.
        params: Model parameters matching the data dims.

    Returns:
        The log-likelihood.

    Raises:
        ShapeError: If params do not match the data.
        SingularMatrixError: If C is numerically singular.
    """
    check_data_matches(data, params)
    factor = factor_covariance(params)
    x = data.stacked()
    n = data.n_subjects
    p = x.shape[0]

    quad = float(np.sum(x * x / factor.d[:, None]))
    if factor.r_total:
        proj = factor.whitened_projection(x)
        half = linalg.solve_triangular(factor.chol, proj, lower=True)
        quad -= float(np.sum(half * half))
    return -0.5 * (n * p * _LOG_2PI + n * factor.logdet + quad)


def count_parameters(
    dims: Sequence[int],
    ranks: BlockRanks,
    noise_model: NoiseModel | str,
) -> int:
    """Free parameter count used by AIC and BIC.

    Raw entries of every W_Jk and W_Ik plus one variance per block (isotropic)
    or per feature (diagonal). Rotational indeterminacy is not subtracted.
    """
    noise_model = NoiseModel(noise_model)
    loadings = sum(p * ranks.block_rank(k) for k, p in enumerate(dims))
    noise = len(dims) if noise_model is NoiseModel.ISOTROPIC else sum(dims)
    return int(loadings + noise)


def information_criteria(loglik: float, n_params: int, n_subjects: int) -> tuple[float, float]:
    """AIC and BIC for a fitted log-likelihood.

    Returns:
        (aic, bic) with aic = -2 l + 2 m and bic = -2 l + m log(n).
    """
    aic = -2.0 * loglik + 2.0 * n_params
    bic = -2.0 * loglik + n_params * math.log(n_subjects)
    return aic, bic
