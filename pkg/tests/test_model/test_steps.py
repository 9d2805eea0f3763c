"""Tests for the E-step and M-step."""

from __future__ import annotations

from collections.abc import Callable

import numpy as np
import pytest

from projive.core.data import BlockRanks, MultiBlockData, NoiseModel, ProjiveParams
from projive.core.errors import ShapeError
from projive.core.events import EventBus, EventType
from projive.core.layout import StackedLayout, assemble_w, model_covariance
from projive.model.likelihood import log_likelihood
from projive.model.steps import PosteriorScores, _block_noise, e_step, m_step


class TestEStep:
    """Tests for e_step."""

    def test_matches_gaussian_conditioning(self, small_data: MultiBlockData, small_params: ProjiveParams) -> None:
        """Posterior moments equal the dense conditional Gaussian formulas."""
        w = assemble_w(small_params, StackedLayout.from_params(small_params))
        c = model_covariance(small_params)
        x = small_data.stacked()
        scores = e_step(small_data, small_params)

        np.testing.assert_allclose(scores.mean, (w.T @ np.linalg.solve(c, x)).T, rtol=1e-9, atol=1e-10)
        np.testing.assert_allclose(
            scores.cov, np.eye(w.shape[1]) - w.T @ np.linalg.solve(c, w), rtol=1e-9, atol=1e-10
        )

    def test_second_moment(self, small_data: MultiBlockData, small_params: ProjiveParams) -> None:
        """Summed second moment is n Cov + mean^T mean and symmetric."""
        scores = e_step(small_data, small_params)
        expected = scores.n_subjects * scores.cov + scores.mean.T @ scores.mean

        np.testing.assert_allclose(scores.second_moment_sum, expected, rtol=1e-12)
        np.testing.assert_array_equal(scores.second_moment_sum, scores.second_moment_sum.T)

    def test_shape_validation(self) -> None:
        """Moments must agree on the latent dimension."""
        with pytest.raises(ShapeError):
            PosteriorScores(mean=np.zeros((4, 2)), cov=np.eye(3), second_moment_sum=np.eye(2))


class TestMStep:
    """Tests for m_step."""

    def test_does_not_decrease_likelihood(self, small_data: MultiBlockData, small_params: ProjiveParams) -> None:
        """One EM step never lowers the log-likelihood."""
        layout = StackedLayout.from_params(small_params)
        before = log_likelihood(small_data, small_params)
        updated = m_step(small_data, e_step(small_data, small_params), layout, NoiseModel.ISOTROPIC)

        assert log_likelihood(small_data, updated) >= before - 1e-8 * (abs(before) + 1.0)

    def test_keeps_block_structure(self, small_data: MultiBlockData, small_params: ProjiveParams) -> None:
        """Updated loadings keep the ranks and noise model."""
        layout = StackedLayout.from_params(small_params)
        updated = m_step(small_data, e_step(small_data, small_params), layout, "diagonal")

        assert updated.ranks == small_params.ranks
        assert updated.noise_model is NoiseModel.DIAGONAL
        assert np.all(updated.noise_vector() > 0)

    def test_layout_mismatch(self, small_data: MultiBlockData, small_params: ProjiveParams) -> None:
        """Scores of another latent dimension are refused."""
        scores = e_step(small_data, small_params)
        layout = StackedLayout(dims=small_data.dims, r_joint=2, r_indiv=(1, 2))
        with pytest.raises(ShapeError):
            m_step(small_data, scores, layout, NoiseModel.ISOTROPIC)

    def test_variance_clamp_emits_event(self) -> None:
        """Residual variances below the floor are clamped and reported."""
        bus = EventBus()
        noise = _block_noise(np.array([0.0, 2.0]), NoiseModel.DIAGONAL, 1, bus)

        np.testing.assert_array_equal(noise.diagonal(2), [1e-12, 2.0])
        (event,) = bus.get_history(EventType.VARIANCE_CLAMPED)
        assert event.data["block"] == 1
        assert event.data["n_clamped"] == 1

    def test_zero_cross_moment(self, small_data: MultiBlockData, small_params: ProjiveParams) -> None:
        """Uninformative scores give zero loadings and the raw second moment as noise."""
        layout = StackedLayout.from_params(small_params)
        n = small_data.n_subjects
        scores = PosteriorScores.from_moments(np.zeros((n, layout.r_total)), np.eye(layout.r_total))
        updated = m_step(small_data, scores, layout, NoiseModel.ISOTROPIC, bus=EventBus())

        np.testing.assert_array_equal(assemble_w(updated, layout), 0.0)
        for k, x in enumerate(small_data.blocks):
            assert updated.noise_diagonal(k)[0] == pytest.approx(np.sum(x * x) / (n * x.shape[0]), rel=1e-12)

    def test_scalar_block(self, rng: np.random.Generator) -> None:
        """With one feature and one score the update is a ratio of sums."""
        n = 30
        x = rng.standard_normal((1, n))
        mean = rng.standard_normal((n, 1))
        variance = 0.3
        layout = StackedLayout(dims=(1, 1), r_joint=1, r_indiv=(0, 0))
        data = MultiBlockData(blocks=(x, 2.0 * x))
        scores = PosteriorScores.from_moments(mean, np.array([[variance]]))
        updated = m_step(data, scores, layout, NoiseModel.ISOTROPIC, bus=EventBus())

        e = mean[:, 0]
        m = variance + e**2
        w = float(np.sum(x[0] * e) / np.sum(m))
        sigma2 = float(np.sum(x[0] ** 2) - 2.0 * w * np.sum(x[0] * e) + w**2 * np.sum(m)) / n
        assert updated.w_joint[0][0, 0] == pytest.approx(w, rel=1e-12)
        assert updated.w_joint[1][0, 0] == pytest.approx(2.0 * w, rel=1e-12)
        assert updated.noise_diagonal(0)[0] == pytest.approx(sigma2, rel=1e-10)

    @pytest.mark.slow
    def test_truth_is_near_fixed_point(
        self,
        make_params: Callable[..., ProjiveParams],
        sample_data: Callable[..., MultiBlockData],
    ) -> None:
        """On a large sample one EM step from the generating parameters barely moves them."""
        params = make_params((3, 3), BlockRanks(r_j=1, r_i=(1, 1)), variances=[0.5, 0.5])
        data = sample_data(params, 100_000)
        layout = StackedLayout.from_params(params)
        updated = m_step(data, e_step(data, params), layout, NoiseModel.ISOTROPIC, bus=EventBus())

        moved = np.sqrt(
            np.sum((assemble_w(updated, layout) - assemble_w(params, layout)) ** 2)
            + np.sum((updated.noise_vector() - params.noise_vector()) ** 2)
        )
        assert moved < 0.05


class TestStackedReference:
    """e_step and m_step against dense single-matrix factor analysis formulas."""

    @pytest.mark.parametrize("noise_model", [NoiseModel.ISOTROPIC, NoiseModel.DIAGONAL])
    def test_one_em_step(
        self, small_data: MultiBlockData, small_params: ProjiveParams, noise_model: NoiseModel
    ) -> None:
        """Dense conditioning on the stacked W plus a block-masked regression reproduce one step."""
        layout = StackedLayout.from_params(small_params)
        w = assemble_w(small_params, layout)
        x = small_data.stacked()
        n = small_data.n_subjects
        c_inv_w = np.linalg.solve(model_covariance(small_params), w)
        mean = x.T @ c_inv_w
        second = n * (np.eye(layout.r_total) - w.T @ c_inv_w) + mean.T @ mean
        cross = x @ mean

        expected_w = np.zeros_like(w)
        for k in range(layout.n_blocks):
            l_k, m_k = layout.selector_l(k), layout.selector_m(k)
            w_k = l_k @ cross @ m_k.T @ np.linalg.inv(m_k @ second @ m_k.T)
            expected_w += l_k.T @ w_k @ m_k
        residual = np.diag(x @ x.T - 2.0 * cross @ expected_w.T + expected_w @ second @ expected_w.T) / n
        if noise_model is NoiseModel.ISOTROPIC:
            residual = np.concatenate(
                [np.full(p, residual[layout.block_rows(k)].mean()) for k, p in enumerate(layout.dims)]
            )

        updated = m_step(small_data, e_step(small_data, small_params), layout, noise_model, bus=EventBus())

        np.testing.assert_allclose(assemble_w(updated, layout), expected_w, rtol=1e-9, atol=1e-10)
        np.testing.assert_allclose(updated.noise_vector(), residual, rtol=1e-9, atol=1e-10)
