"""E-step and M-step of the ProJIVE EM algorithm.

E-step: with theta_i ~ N(0, I_r) and x_i | theta_i ~ N(W theta_i, D),

    E(theta_i | x_i)   = W^T C^-1 x_i = M^-1 W^T D^-1 x_i
    Cov(theta_i | x_i) = I_r - W^T C^-1 W = M^-1

so the posterior covariance is shared by every subject.

M-step: block k only sees theta_ik = (z_i, b_ik), the M_k-selected part of
theta_i. Its loadings W_k = [W_Jk | W_Ik] solve

    W_k (sum_i E(theta_ik theta_ik^T)) = sum_i x_ik E(theta_ik)^T

and D_k is the diagonal of the expected residual second moment divided by n
(its average for the isotropic model).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from projive.core.constants import SINGULARITY_TOLERANCE, VARIANCE_FLOOR
from projive.core.data import (
    DiagonalNoise,
    FloatArray,
    IsotropicNoise,
    MultiBlockData,
    Noise,
    NoiseModel,
    ProjiveParams,
    frozen_array,
)
from projive.core.errors import ShapeError, SingularMatrixError
from projive.core.events import EventBus, EventType, get_event_bus
from projive.core.layout import StackedLayout
from projive.model.likelihood import check_data_matches, factor_covariance

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PosteriorScores:
    """Conditional moments of the latent scores given the data.

    Attributes:
        mean: E(theta_i | x_i) for every subject, shape (n, r_total).
        cov: Cov(theta_i | x_i), shape (r_total, r_total); the same for all i.
        second_moment_sum: sum_i E(theta_i theta_i^T | x_i) = n cov + mean^T mean.
    """

    mean: FloatArray
    cov: FloatArray
    second_moment_sum: FloatArray

    def __post_init__(self) -> None:
        """Validate shapes and freeze arrays."""
        mean = frozen_array(self.mean, ndim=2, name="posterior mean")
        cov = frozen_array(self.cov, ndim=2, name="posterior covariance")
        second = frozen_array(self.second_moment_sum, ndim=2, name="second moment sum")
        r = mean.shape[1]
        if cov.shape != (r, r) or second.shape != (r, r):
            msg = f"Posterior moments disagree on the latent dimension {r}: {cov.shape}, {second.shape}"
            raise ShapeError(msg)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "second_moment_sum", second)

    @classmethod
    def from_moments(cls, mean: FloatArray, cov: FloatArray) -> PosteriorScores:
        """Build scores from the posterior mean and shared covariance."""
        n = mean.shape[0]
        second = n * cov + mean.T @ mean
        return cls(mean=mean, cov=cov, second_moment_sum=0.5 * (second + second.T))

    @property
    def n_subjects(self) -> int:
        """Number of subjects n."""
        return int(self.mean.shape[0])

    @property
    def r_total(self) -> int:
        """Latent dimension r."""
        return int(self.mean.shape[1])


def e_step(data: MultiBlockData, params: ProjiveParams) -> PosteriorScores:
    """Posterior moments of theta_i for every subject.

    Args:
        data: Observations matching params.
        params: Current parameters.

    Returns:
        PosteriorScores for all n subjects.

    Raises:
        SingularMatrixError: If the model covariance is singular.
    """
    check_data_matches(data, params)
    factor = factor_covariance(params)
    cov = factor.posterior_cov()
    x = data.stacked()
    if factor.r_total == 0:
        return PosteriorScores.from_moments(np.zeros((data.n_subjects, 0)), cov)
    proj = factor.whitened_projection(x)
    mean = linalg.cho_solve((factor.chol, True), proj).T
    return PosteriorScores.from_moments(mean, cov)


def _block_noise(
    residual_diag: FloatArray,
    noise_model: NoiseModel,
    k: int,
    bus: EventBus,
) -> Noise:
    """Noise term of block k from the per-feature residual variances, floored."""
    values = residual_diag.mean(keepdims=True) if noise_model is NoiseModel.ISOTROPIC else residual_diag
    low = values < VARIANCE_FLOOR
    if np.any(low):
        logger.warning(
            "Block %d: %d noise variance(s) below %.1e clamped to the floor",
            k,
            int(low.sum()),
            VARIANCE_FLOOR,
        )
        bus.emit_simple(
            EventType.VARIANCE_CLAMPED,
            source="m_step",
            message=f"block {k}: {int(low.sum())} variance(s) clamped",
            block=k,
            n_clamped=int(low.sum()),
            smallest=float(values.min()),
        )
        values = np.maximum(values, VARIANCE_FLOOR)
    if noise_model is NoiseModel.ISOTROPIC:
        return IsotropicNoise(float(values[0]))
    return DiagonalNoise(values)


def m_step(
    data: MultiBlockData,
    scores: PosteriorScores,
    layout: StackedLayout,
    noise_model: NoiseModel | str,
    *,
    bus: EventBus | None = None,
) -> ProjiveParams:
    """Closed-form parameter update given posterior moments.

    Args:
        data: Observations.
        scores: Posterior moments from `e_step`.
        layout: Layout of the model being fit.
        noise_model: Structure of D_k.
        bus: Event bus for clamp notifications (global bus if None).

    Returns:
        Updated parameters.

    Raises:
        ShapeError: If data, scores and layout disagree.
        SingularMatrixError: If a block's score second moment is singular.
    """
    noise_model = NoiseModel(noise_model)
    bus = bus or get_event_bus()
    if data.dims != layout.dims or scores.r_total != layout.r_total:
        msg = (
            f"m_step inputs disagree: data dims {data.dims}, layout dims {layout.dims}, "
            f"score dimension {scores.r_total} vs layout {layout.r_total}"
        )
        raise ShapeError(msg)
    if scores.n_subjects != data.n_subjects:
        msg = f"Scores cover {scores.n_subjects} subjects, data has {data.n_subjects}"
        raise ShapeError(msg)

    n = data.n_subjects
    w_joint: list[FloatArray] = []
    w_indiv: list[FloatArray] = []
    noise: list[Noise] = []
    for k, x in enumerate(data.blocks):
        cols = layout.score_cols(k)
        cross = x @ scores.mean[:, cols]
        second = scores.second_moment_sum[np.ix_(cols, cols)]

        eig = np.linalg.eigvalsh(second)
        if eig.size and eig[0] <= SINGULARITY_TOLERANCE * eig[-1]:
            msg = (
                f"Block {k}: score second moment is singular (eigenvalues {eig[0]:.3g} .. {eig[-1]:.3g}); "
                "try smaller ranks"
            )
            raise SingularMatrixError(msg)

        w = linalg.solve(second, cross.T, assume_a="pos").T if eig.size else np.zeros((x.shape[0], 0))
        residual = (
            np.sum(x * x, axis=1)
            - 2.0 * np.sum(w * cross, axis=1)
            + np.sum((w @ second) * w, axis=1)
        ) / n
        w_joint.append(w[:, : layout.r_joint])
        w_indiv.append(w[:, layout.r_joint :])
        noise.append(_block_noise(residual, noise_model, k, bus))

    return ProjiveParams(w_joint=tuple(w_joint), w_indiv=tuple(w_indiv), noise=tuple(noise))
