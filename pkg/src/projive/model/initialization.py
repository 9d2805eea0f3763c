"""Starting values for the EM algorithm.

Every strategy starts the noise at the probabilistic-PCA estimate: the mean of
the p_k - r_J - r_Ik smallest eigenvalues of block k's sample covariance.
Loadings come from one of

- Cholesky: columns of the lower Cholesky factor of the block covariance
- RandomNormal: standard normal entries from a seeded generator
- Provided: any externally computed parameters, e.g. the generating
  parameters of a simulation (an "oracle" start)
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import TypeAlias

import numpy as np
from scipy import linalg

from projive.core.constants import START_NOISE_FRACTION, VARIANCE_FLOOR
from projive.core.data import (
    BlockRanks,
    DiagonalNoise,
    FloatArray,
    IsotropicNoise,
    MultiBlockData,
    Noise,
    NoiseModel,
    ProjiveParams,
)
from projive.core.errors import RankError, ShapeError, SingularMatrixError

logger = logging.getLogger(__name__)

#: Cholesky retries before giving up; jitter grows tenfold per retry.
_MAX_JITTER_TRIES = 8


class InitMethod(str, Enum):
    """Initialization strategies selectable by name."""

    CHOLESKY = "cholesky"
    RANDOM = "random"
    ALL = "all"


@dataclass(frozen=True)
class Cholesky:
    """Loadings from the Cholesky factor of each block's sample covariance."""


@dataclass(frozen=True)
class RandomNormal:
    """Standard normal loadings drawn from a seeded generator.

    Attributes:
        seed: Generator seed; equal seeds give bit-identical starts.
    """

    seed: int = 0


@dataclass(frozen=True)
class Provided:
    """Externally supplied starting parameters.

    Attributes:
        params: Starting parameters; shapes must match the data and ranks.
    """

    params: ProjiveParams


InitStrategy: TypeAlias = Cholesky | RandomNormal | Provided


def strategy_from_name(name: InitMethod | str, seed: int = 0) -> InitStrategy:
    """Map a CLI/config name to a single strategy.

    Raises:
        ValueError: For `all`, which names several starts (see `strategies_from_name`).
    """
    method = InitMethod(name)
    if method is InitMethod.ALL:
        msg = "init 'all' names several starts; use strategies_from_name"
        raise ValueError(msg)
    if method is InitMethod.CHOLESKY:
        return Cholesky()
    return RandomNormal(seed=seed)


def strategies_from_name(name: InitMethod | str, seed: int = 0) -> tuple[InitStrategy, ...]:
    """Starts for a CLI/config name; `all` gives Cholesky then RandomNormal."""
    method = InitMethod(name)
    if method is InitMethod.ALL:
        return (Cholesky(), RandomNormal(seed=seed))
    return (strategy_from_name(method, seed),)


def sample_covariance(block: FloatArray) -> FloatArray:
    """S_k = X_k X_k^T / n, symmetrized."""
    s = block @ block.T / block.shape[1]
    return 0.5 * (s + s.T)


def estimate_noise_variance(block: FloatArray, signal_rank: int) -> float:
    """Probabilistic-PCA noise estimate for one block.

    Args:
        block: Features x subjects block.
        signal_rank: r_J + r_Ik.

    Returns:
        Mean of the p_k - signal_rank smallest eigenvalues of the block's
        sample covariance, raised to START_NOISE_FRACTION of the mean
        eigenvalue (and at least the variance floor) if smaller.

    Raises:
        RankError: If signal_rank >= p_k.
        SingularMatrixError: If the sample covariance is not positive semidefinite.
    """
    p = block.shape[0]
    if signal_rank >= p:
        msg = f"Signal rank {signal_rank} leaves no noise directions in a block of {p} features"
        raise RankError(msg)
    eig = np.linalg.eigvalsh(sample_covariance(block))
    scale = max(float(np.abs(eig).max()), 1.0)
    if eig[0] < -1e-8 * scale:
        msg = f"Sample covariance is not positive semidefinite (smallest eigenvalue {eig[0]:.3g})"
        raise SingularMatrixError(msg)
    sigma2 = float(np.clip(eig[: p - signal_rank], 0.0, None).mean())
    floor = max(VARIANCE_FLOOR, START_NOISE_FRACTION * float(np.clip(eig, 0.0, None).mean()))
    if sigma2 < floor:
        logger.warning("Initial noise variance %.3g raised to %.3g", sigma2, floor)
        sigma2 = floor
    return sigma2


def _cholesky_factor(s: FloatArray) -> FloatArray:
    """Lower Cholesky factor, adding diagonal jitter if s is only semidefinite."""
    jitter = 0.0
    base = max(float(np.trace(s)) / s.shape[0], 1.0) * 1e-10
    for attempt in range(_MAX_JITTER_TRIES):
        try:
            return linalg.cholesky(s + jitter * np.eye(s.shape[0]), lower=True)
        except linalg.LinAlgError:
            jitter = base * 10.0**attempt
            logger.warning("Sample covariance not positive definite; retrying Cholesky with jitter %.3g", jitter)
    msg = "Cholesky initialization failed: sample covariance is not positive definite"
    raise SingularMatrixError(msg)


def _noise(sigma2: float, p: int, noise_model: NoiseModel) -> Noise:
    if noise_model is NoiseModel.ISOTROPIC:
        return IsotropicNoise(sigma2)
    return DiagonalNoise(np.full(p, sigma2))


def _coerce_noise(params: ProjiveParams, noise_model: NoiseModel) -> ProjiveParams:
    """Convert provided parameters to the requested noise structure."""
    if params.noise_model is noise_model:
        return params
    logger.info("Converting provided %s noise to %s", params.noise_model.value, noise_model.value)
    noise: tuple[Noise, ...]
    if noise_model is NoiseModel.ISOTROPIC:
        noise = tuple(IsotropicNoise(float(params.noise_diagonal(k).mean())) for k in range(params.n_blocks))
    else:
        noise = tuple(DiagonalNoise(params.noise_diagonal(k)) for k in range(params.n_blocks))
    return ProjiveParams(w_joint=params.w_joint, w_indiv=params.w_indiv, noise=noise)


def initialize(
    data: MultiBlockData,
    ranks: BlockRanks,
    strategy: InitStrategy,
    noise_model: NoiseModel | str = NoiseModel.ISOTROPIC,
) -> ProjiveParams:
    """Starting parameters for `fit`.

    Args:
        data: Observations.
        ranks: Joint and individual ranks.
        strategy: How loadings are initialized.
        noise_model: Structure of D_k.

    Returns:
        Initial parameters.

    Raises:
        RankError: If the ranks do not fit the data, or n is too small for Cholesky.
        ShapeError: If provided parameters do not match data and ranks.
    """
    noise_model = NoiseModel(noise_model)
    ranks.validate_for(data.dims, require_joint=False)

    if isinstance(strategy, Provided):
        params = strategy.params
        if params.dims != data.dims or params.ranks != ranks:
            msg = (
                f"Provided parameters have dims {params.dims} and ranks {params.ranks}, "
                f"expected {data.dims} and {ranks}"
            )
            raise ShapeError(msg)
        return _coerce_noise(params, noise_model)

    if isinstance(strategy, Cholesky):
        widest = ranks.r_j + max(ranks.r_i, default=0)
        if data.n_subjects <= widest:
            msg = f"Cholesky initialization needs n > r_J + max r_Ik = {widest}, got n = {data.n_subjects}"
            raise RankError(msg)

    rng = np.random.default_rng(strategy.seed) if isinstance(strategy, RandomNormal) else None
    w_joint: list[FloatArray] = []
    w_indiv: list[FloatArray] = []
    noise: list[Noise] = []
    for k, block in enumerate(data.blocks):
        p = block.shape[0]
        r_i = ranks.r_i[k]
        if rng is not None:
            w_joint.append(rng.standard_normal((p, ranks.r_j)))
            w_indiv.append(rng.standard_normal((p, r_i)))
        else:
            chol = _cholesky_factor(sample_covariance(block))
            w_joint.append(chol[:, : ranks.r_j])
            w_indiv.append(chol[:, ranks.r_j : ranks.r_j + r_i])
        noise.append(_noise(estimate_noise_variance(block, ranks.block_rank(k)), p, noise_model))

    logger.debug("Initialized %d blocks with %s", data.n_blocks, type(strategy).__name__)
    return ProjiveParams(w_joint=tuple(w_joint), w_indiv=tuple(w_indiv), noise=tuple(noise))
