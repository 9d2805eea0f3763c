"""Stacked layout of the multi-block model and the covariance it implies.

Stacking x_i = (x_i1, ..., x_iK) and theta_i = (z_i, b_i1, ..., b_iK) turns
the K block equations into a single factor model x_i = W theta_i + e_i with a
block-structured W. `StackedLayout` records where each block sits in the
stacked feature vector (the selection matrices L_k) and which latent columns
feed block k (the selection matrices M_k), so that L_k W = W_k M_k.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from projive.core.data import BlockRanks, FloatArray, ProjiveParams
from projive.core.errors import ShapeError


@dataclass(frozen=True)
class StackedLayout:
    """Row and column bookkeeping for the stacked model.

    Latent columns are ordered joint first, then b_1, ..., b_K.

    Attributes:
        dims: Feature count p_k of every block.
        r_joint: Joint rank r_J.
        r_indiv: Individual rank r_Ik of every block.
    """

    dims: tuple[int, ...]
    r_joint: int
    r_indiv: tuple[int, ...]

    def __post_init__(self) -> None:
        """Validate that dims and individual ranks line up."""
        object.__setattr__(self, "dims", tuple(int(p) for p in self.dims))
        object.__setattr__(self, "r_indiv", tuple(int(r) for r in self.r_indiv))
        if len(self.dims) != len(self.r_indiv):
            msg = f"Layout has {len(self.dims)} blocks but {len(self.r_indiv)} individual ranks"
            raise ShapeError(msg)

    @classmethod
    def from_ranks(cls, dims: Sequence[int], ranks: BlockRanks) -> StackedLayout:
        """Layout for data of the given dimensions fit at the given ranks."""
        return cls(dims=tuple(dims), r_joint=ranks.r_j, r_indiv=ranks.r_i)

    @classmethod
    def from_params(cls, params: ProjiveParams) -> StackedLayout:
        """Layout implied by the parameter shapes."""
        return cls.from_ranks(params.dims, params.ranks)

    @property
    def n_blocks(self) -> int:
        """Number of blocks K."""
        return len(self.dims)

    @property
    def p_total(self) -> int:
        """Total feature count p = sum_k p_k."""
        return sum(self.dims)

    @property
    def r_total(self) -> int:
        """Total latent dimension r = r_J + sum_k r_Ik."""
        return self.r_joint + sum(self.r_indiv)

    @property
    def block_row_offsets(self) -> tuple[int, ...]:
        """First row of every block inside the stacked feature vector."""
        return tuple(int(x) for x in np.concatenate([[0], np.cumsum(self.dims)[:-1]]))

    @property
    def score_col_offsets(self) -> tuple[int, ...]:
        """First column of every latent group: joint, then b_1, ..., b_K."""
        sizes = [self.r_joint, *self.r_indiv]
        return tuple(int(x) for x in np.concatenate([[0], np.cumsum(sizes)[:-1]]))

    @property
    def ranks(self) -> BlockRanks:
        """Ranks described by this layout."""
        return BlockRanks(r_j=self.r_joint, r_i=self.r_indiv)

    def block_rows(self, k: int) -> slice:
        """Rows of block k in the stacked feature vector (L_k)."""
        start = self.block_row_offsets[k]
        return slice(start, start + self.dims[k])

    def joint_cols(self) -> slice:
        """Latent columns of the joint scores z."""
        return slice(0, self.r_joint)

    def indiv_cols(self, k: int) -> slice:
        """Latent columns of the individual scores b_k."""
        start = self.score_col_offsets[k + 1]
        return slice(start, start + self.r_indiv[k])

    def score_cols(self, k: int) -> NDArray[np.intp]:
        """Latent columns of theta_ik = (z, b_k) (M_k)."""
        joint = np.arange(self.r_joint)
        indiv = np.arange(self.r_total)[self.indiv_cols(k)]
        return np.concatenate([joint, indiv]).astype(np.intp)

    def select_block(self, stacked: FloatArray, k: int) -> FloatArray:
        """Apply L_k: rows of block k from a stacked (p_total, ...) array."""
        return stacked[self.block_rows(k)]

    def select_scores(self, theta: FloatArray, k: int) -> FloatArray:
        """Apply M_k: columns (z, b_k) from an (..., r_total) score array."""
        return theta[..., self.score_cols(k)]

    def selector_l(self, k: int) -> FloatArray:
        """Explicit 0/1 selection matrix L_k of shape (p_k, p_total)."""
        return np.eye(self.p_total)[self.block_rows(k)]

    def selector_m(self, k: int) -> FloatArray:
        """Explicit 0/1 selection matrix M_k of shape (r_J + r_Ik, r_total)."""
        return np.eye(self.r_total)[self.score_cols(k)]

    def check_params(self, params: ProjiveParams) -> None:
        """Raise ShapeError unless params have exactly this layout."""
        if params.dims != self.dims or params.ranks != self.ranks:
            msg = (
                f"Parameters with dims {params.dims} and ranks {params.ranks} do not "
                f"match layout dims {self.dims} and ranks {self.ranks}"
            )
            raise ShapeError(msg)


def assemble_w(params: ProjiveParams, layout: StackedLayout) -> FloatArray:
    """Assemble the block-structured loading matrix W.

    Row block k is [W_Jk | 0 ... W_Ik ... 0], with W_Ik placed in the
    columns of b_k.

    Args:
        params: Model parameters.
        layout: Stacked layout matching the parameters.

    Returns:
        W of shape (p_total, r_total).

    Raises:
        ShapeError: If params and layout disagree.
    """
    layout.check_params(params)
    w = np.zeros((layout.p_total, layout.r_total))
    for k in range(layout.n_blocks):
        rows = layout.block_rows(k)
        w[rows, layout.joint_cols()] = params.w_joint[k]
        w[rows, layout.indiv_cols(k)] = params.w_indiv[k]
    return w


def model_covariance(params: ProjiveParams) -> FloatArray:
    """Marginal covariance C = W W^T + D of the stacked observation.

    Off-diagonal blocks are W_Jk W_Jk'^T; diagonal blocks are
    W_Jk W_Jk^T + W_Ik W_Ik^T + D_k.
    """
    w = assemble_w(params, StackedLayout.from_params(params))
    c = w @ w.T
    c[np.diag_indices_from(c)] += params.noise_vector()
    return 0.5 * (c + c.T)


def fitted_variance_explained(params: ProjiveParams) -> list[tuple[float, float]]:
    """Model-implied share of each block's variance from joint and individual parts.

    Returns:
        Per block, (tr(W_Jk W_Jk^T), tr(W_Ik W_Ik^T)) divided by tr(C_kk).
    """
    shares: list[tuple[float, float]] = []
    for k in range(params.n_blocks):
        joint = float(np.sum(params.w_joint[k] ** 2))
        indiv = float(np.sum(params.w_indiv[k] ** 2))
        total = joint + indiv + float(params.noise_diagonal(k).sum())
        shares.append((joint / total, indiv / total))
    return shares


def normalized_joint_loadings(params: ProjiveParams) -> list[FloatArray]:
    """Joint loadings divided by the largest absolute joint loading of any block."""
    scale = max(float(np.abs(w).max(initial=0.0)) for w in params.w_joint)
    if scale == 0:
        msg = "All joint loadings are zero; nothing to normalize"
        raise ValueError(msg)
    return [w / scale for w in params.w_joint]
