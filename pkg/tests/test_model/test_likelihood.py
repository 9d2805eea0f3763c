"""Tests for the observed-data log-likelihood."""

from __future__ import annotations

import math
from collections.abc import Callable

import numpy as np
import pytest
from scipy.stats import multivariate_normal, ortho_group

from projive.core.data import BlockRanks, MultiBlockData, NoiseModel, ProjiveParams, isotropic_params
from projive.core.errors import ShapeError, SingularMatrixError
from projive.core.layout import model_covariance
from projive.model.likelihood import (
    count_parameters,
    factor_covariance,
    information_criteria,
    log_likelihood,
)


def _oracle(data: MultiBlockData, params: ProjiveParams) -> float:
    c = model_covariance(params)
    return float(multivariate_normal(mean=np.zeros(c.shape[0]), cov=c).logpdf(data.stacked().T).sum())


class TestLogLikelihood:
    """Tests for log_likelihood."""

    def test_matches_dense_gaussian(self, small_data: MultiBlockData, small_params: ProjiveParams) -> None:
        """Woodbury evaluation agrees with the dense multivariate normal."""
        assert log_likelihood(small_data, small_params) == pytest.approx(
            _oracle(small_data, small_params), rel=1e-10
        )

    def test_fewer_subjects_than_features(
        self,
        small_params: ProjiveParams,
        sample_data: Callable[..., MultiBlockData],
    ) -> None:
        """n < p_total is fine because S is never inverted."""
        data = sample_data(small_params, 5)

        assert log_likelihood(data, small_params) == pytest.approx(_oracle(data, small_params), rel=1e-10)

    def test_rotation_invariance(self, small_data: MultiBlockData, small_params: ProjiveParams) -> None:
        """Rotating the individual loadings does not change the likelihood."""
        rotated = small_params.rotated(None, [None, ortho_group.rvs(2, random_state=11)])

        assert log_likelihood(small_data, rotated) == pytest.approx(
            log_likelihood(small_data, small_params), rel=1e-12
        )

    def test_shape_mismatch(self, small_data: MultiBlockData, make_params: Callable[..., ProjiveParams]) -> None:
        """Parameters for other block dims are refused."""
        other = make_params((6, 9), BlockRanks(r_j=1, r_i=(1, 2)))
        with pytest.raises(ShapeError):
            log_likelihood(small_data, other)

    def test_singular_covariance(self) -> None:
        """Noise at the floor under strong signal is numerically singular."""
        params = isotropic_params([np.ones((3, 1)), np.ones((3, 1))], [np.zeros((3, 0))] * 2, [1e-12, 1e-12])
        with pytest.raises(SingularMatrixError):
            factor_covariance(params)

    def test_logdet(self, small_params: ProjiveParams) -> None:
        """The factor's log-determinant is log|C|."""
        sign, logdet = np.linalg.slogdet(model_covariance(small_params))

        assert sign > 0
        assert factor_covariance(small_params).logdet == pytest.approx(logdet, rel=1e-10)


class TestCriteria:
    """Tests for parameter counts and AIC/BIC."""

    def test_count_isotropic(self) -> None:
        """Loading entries plus one variance per block."""
        assert count_parameters((6, 8), BlockRanks(r_j=1, r_i=(1, 2)), NoiseModel.ISOTROPIC) == 6 * 2 + 8 * 3 + 2

    def test_count_diagonal(self) -> None:
        """Loading entries plus one variance per feature."""
        assert count_parameters((6, 8), BlockRanks(r_j=1, r_i=(1, 2)), "diagonal") == 6 * 2 + 8 * 3 + 14

    def test_information_criteria(self) -> None:
        """AIC and BIC follow their textbook definitions."""
        aic, bic = information_criteria(-10.0, 3, 100)

        assert aic == pytest.approx(26.0)
        assert bic == pytest.approx(20.0 + 3 * math.log(100))
