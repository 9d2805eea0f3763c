"""Tests for the stacked layout and model covariance."""

from __future__ import annotations

from collections.abc import Callable

import numpy as np
import pytest
from scipy.stats import ortho_group

from projive.core.data import BlockRanks, ProjiveParams, isotropic_params
from projive.core.errors import ShapeError
from projive.core.layout import (
    StackedLayout,
    assemble_w,
    fitted_variance_explained,
    model_covariance,
    normalized_joint_loadings,
)


@pytest.fixture
def layout() -> StackedLayout:
    """Three blocks with different individual ranks."""
    return StackedLayout.from_ranks((2, 3, 4), BlockRanks(r_j=1, r_i=(1, 0, 2)))


class TestStackedLayout:
    """Tests for StackedLayout."""

    def test_offsets(self, layout: StackedLayout) -> None:
        """Row and column offsets follow the block order."""
        assert layout.p_total == 9
        assert layout.r_total == 4
        assert layout.block_row_offsets == (0, 2, 5)
        assert layout.score_col_offsets == (0, 1, 2, 2)

    def test_score_cols(self, layout: StackedLayout) -> None:
        """theta_ik selects the joint columns and the block's own columns."""
        np.testing.assert_array_equal(layout.score_cols(0), [0, 1])
        np.testing.assert_array_equal(layout.score_cols(1), [0])
        np.testing.assert_array_equal(layout.score_cols(2), [0, 2, 3])

    def test_selectors_agree_with_slicing(self, layout: StackedLayout, rng: np.random.Generator) -> None:
        """L_k and M_k as matrices equal the slicing helpers."""
        x = rng.standard_normal((layout.p_total, 5))
        theta = rng.standard_normal((5, layout.r_total))
        for k in range(layout.n_blocks):
            np.testing.assert_array_equal(layout.selector_l(k) @ x, layout.select_block(x, k))
            np.testing.assert_array_equal(theta @ layout.selector_m(k).T, layout.select_scores(theta, k))

    def test_mismatched_ranks(self) -> None:
        """Individual ranks must match the block count."""
        with pytest.raises(ShapeError):
            StackedLayout(dims=(2, 3), r_joint=1, r_indiv=(1,))


class TestAssembleW:
    """Tests for assemble_w and model_covariance."""

    def test_block_structure(self, make_params: Callable[..., ProjiveParams], layout: StackedLayout) -> None:
        """L_k W equals W_k M_k for every block."""
        params = make_params(layout.dims, layout.ranks)
        w = assemble_w(params, layout)
        for k in range(layout.n_blocks):
            np.testing.assert_array_equal(
                layout.selector_l(k) @ w, params.block_loadings(k) @ layout.selector_m(k)
            )

    def test_layout_mismatch(self, small_params: ProjiveParams) -> None:
        """A layout for other ranks is refused."""
        other = StackedLayout.from_ranks(small_params.dims, BlockRanks(r_j=2, r_i=(1, 2)))
        with pytest.raises(ShapeError):
            assemble_w(small_params, other)

    def test_cross_block_covariance(self, small_params: ProjiveParams) -> None:
        """Off-diagonal blocks carry only the joint loadings."""
        c = model_covariance(small_params)
        wj0, wj1 = small_params.w_joint

        np.testing.assert_allclose(c[:6, 6:], wj0 @ wj1.T, atol=1e-12)
        np.testing.assert_allclose(c, c.T, atol=0)

    @pytest.mark.slow
    def test_matches_generative_sampling(
        self, make_params: Callable[..., ProjiveParams], rng: np.random.Generator
    ) -> None:
        """C agrees with the sample covariance of a million draws of x = W theta + e."""
        params = make_params((3, 4), BlockRanks(r_j=1, r_i=(1, 2)))
        n = 1_000_000
        z = rng.standard_normal((n, 1))
        blocks = [
            w_j @ z.T
            + w_i @ rng.standard_normal((n, w_i.shape[1])).T
            + np.sqrt(d)[:, None] * rng.standard_normal((p, n))
            for w_j, w_i, d, p in zip(
                params.w_joint,
                params.w_indiv,
                (params.noise_diagonal(k) for k in range(2)),
                params.dims,
                strict=True,
            )
        ]
        x = np.vstack(blocks)
        sample = x @ x.T / n
        c = model_covariance(params)
        se = np.sqrt((np.outer(np.diag(c), np.diag(c)) + c**2) / n)

        assert np.all(np.abs(sample - c) <= 4.0 * se)

    def test_rotation_invariance(self, small_params: ProjiveParams) -> None:
        """Orthogonal rotations of joint and individual loadings keep C."""
        o_ind = ortho_group.rvs(2, random_state=3)
        rotated = small_params.rotated(np.array([[-1.0]]), [np.array([[-1.0]]), o_ind])

        np.testing.assert_allclose(model_covariance(rotated), model_covariance(small_params), atol=1e-12)

    def test_joint_scale_exchange(self) -> None:
        """Trading joint scale between blocks against individual scale leaves C unchanged."""
        a = np.array([[1.0], [2.0], [0.5]])
        b = np.array([[0.3], [-1.0], [1.5], [0.8]])
        base = isotropic_params([a, b], [a, b], [0.7, 1.3])
        for lam2 in (0.5, 1.0, 2.0):
            lam = np.sqrt(lam2)
            exchanged = isotropic_params(
                [lam * a, b / lam],
                [np.sqrt(2.0 - lam2) * a, np.sqrt(2.0 - 1.0 / lam2) * b],
                [0.7, 1.3],
            )
            np.testing.assert_allclose(model_covariance(exchanged), model_covariance(base), rtol=0.0, atol=1e-12)


class TestSummaries:
    """Tests for variance shares and normalized loadings."""

    def test_fitted_variance_explained(self) -> None:
        """Shares are trace ratios of the model covariance."""
        params = isotropic_params(
            [np.array([[1.0], [1.0]]), np.array([[2.0], [0.0]])],
            [np.array([[1.0], [0.0]]), np.zeros((2, 0))],
            [0.5, 1.0],
        )
        shares = fitted_variance_explained(params)

        assert shares[0] == pytest.approx((2.0 / 4.0, 1.0 / 4.0))
        assert shares[1] == pytest.approx((4.0 / 6.0, 0.0))

    def test_normalized_joint_loadings(self) -> None:
        """The largest absolute joint loading becomes 1."""
        params = isotropic_params(
            [np.array([[1.0], [-4.0]]), np.array([[2.0], [0.0]])], [np.zeros((2, 0))] * 2, [1.0, 1.0]
        )
        normalized = normalized_joint_loadings(params)

        np.testing.assert_allclose(normalized[0].ravel(), [0.25, -1.0])
        np.testing.assert_allclose(normalized[1].ravel(), [0.5, 0.0])
