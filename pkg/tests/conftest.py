"""Shared pytest fixtures for projive tests."""

from __future__ import annotations

from collections.abc import Callable, Sequence

import numpy as np
import pytest

from projive.core.data import BlockRanks, MultiBlockData, ProjiveParams, isotropic_params
from projive.core.events import reset_event_bus
from projive.core.layout import model_covariance

# =============================================================================
# Autouse fixtures for test isolation
# =============================================================================


@pytest.fixture(autouse=True)
def reset_global_state() -> None:
    """Reset the global event bus before each test."""
    reset_event_bus()


# =============================================================================
# Random number generator fixtures
# =============================================================================


@pytest.fixture
def rng() -> np.random.Generator:
    """Provide a seeded random generator for reproducible tests."""
    return np.random.default_rng(42)


# =============================================================================
# Model fixtures
# =============================================================================

ParamsFactory = Callable[..., ProjiveParams]
DataFactory = Callable[..., MultiBlockData]


@pytest.fixture
def make_params(rng: np.random.Generator) -> ParamsFactory:
    """Factory for random isotropic parameters."""

    def make(dims: Sequence[int], ranks: BlockRanks, variances: Sequence[float] | None = None) -> ProjiveParams:
        variances = variances if variances is not None else [0.5 + 0.5 * k for k in range(len(dims))]
        return isotropic_params(
            [rng.standard_normal((p, ranks.r_j)) for p in dims],
            [rng.standard_normal((p, r)) for p, r in zip(dims, ranks.r_i, strict=True)],
            variances,
        )

    return make


@pytest.fixture
def sample_data(rng: np.random.Generator) -> DataFactory:
    """Factory drawing centered data from the model implied by some parameters."""

    def sample(params: ProjiveParams, n: int) -> MultiBlockData:
        c = model_covariance(params)
        x = rng.multivariate_normal(np.zeros(c.shape[0]), c, size=n).T
        x = x - x.mean(axis=1, keepdims=True)
        bounds = np.cumsum(params.dims)[:-1]
        return MultiBlockData(blocks=tuple(np.split(x, bounds, axis=0)))

    return sample


@pytest.fixture
def small_ranks() -> BlockRanks:
    """One joint and (1, 2) individual components."""
    return BlockRanks(r_j=1, r_i=(1, 2))


@pytest.fixture
def small_params(make_params: ParamsFactory, small_ranks: BlockRanks) -> ProjiveParams:
    """Parameters for two blocks of 6 and 8 features."""
    return make_params((6, 8), small_ranks)


@pytest.fixture
def small_data(sample_data: DataFactory, small_params: ProjiveParams) -> MultiBlockData:
    """200 centered subjects drawn from `small_params`."""
    return sample_data(small_params, 200)
