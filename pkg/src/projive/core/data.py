"""Core data containers for multi-block observations and model parameters.

This module defines the immutable structures that flow through the EM engine:

- MultiBlockData: K aligned feature blocks measured on the same n subjects
- BlockRanks: joint rank and per-block individual ranks
- IsotropicNoise / DiagonalNoise: per-block error covariance D_k
- ProjiveParams: joint loadings W_Jk, individual loadings W_Ik and noise D_k

Storage convention: every block is stored **features x subjects** (p_k x n),
the orientation used by the model equations. Most tabular files are subjects x
features; `projive.core.io` transposes on ingest and on export.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field
from enum import Enum
from typing import TypeAlias

import numpy as np
from numpy.typing import ArrayLike, NDArray

from projive.core.constants import RANK_TOLERANCE, VARIANCE_FLOOR
from projive.core.errors import RankError, ShapeError

FloatArray: TypeAlias = NDArray[np.float64]


def frozen_array(values: ArrayLike, *, ndim: int | None = None, name: str = "array") -> FloatArray:
    """Copy values into a read-only float64 array.

    Args:
        values: Anything numpy can convert.
        ndim: Required number of dimensions, if any.
        name: Label used in error messages.

    Returns:
        A new, non-writeable float64 array.

    Raises:
        ShapeError: If the dimensionality does not match.
    """
    arr = np.array(values, dtype=np.float64, copy=True)
    if ndim is not None and arr.ndim != ndim:
        msg = f"{name} must be {ndim}-dimensional, got shape {arr.shape}"
        raise ShapeError(msg)
    arr.setflags(write=False)
    return arr


class NoiseModel(str, Enum):
    """Supported error covariance structures for D_k."""

    ISOTROPIC = "isotropic"
    DIAGONAL = "diagonal"


@dataclass(frozen=True)
class IsotropicNoise:
    """Isotropic block noise, D_k = sigma_k^2 I.

    Attributes:
        variance: The common error variance sigma_k^2.
    """

    variance: float

    def __post_init__(self) -> None:
        """Validate the variance."""
        if not np.isfinite(self.variance) or self.variance < VARIANCE_FLOOR:
            msg = f"Noise variance must be finite and >= {VARIANCE_FLOOR}, got {self.variance}"
            raise ValueError(msg)
        object.__setattr__(self, "variance", float(self.variance))

    @property
    def model(self) -> NoiseModel:
        """Noise structure tag."""
        return NoiseModel.ISOTROPIC

    def diagonal(self, p: int) -> FloatArray:
        """Diagonal of D_k for a block with p features."""
        return np.full(p, self.variance)


@dataclass(frozen=True)
class DiagonalNoise:
    """Feature-specific block noise, D_k = Diag(d_k1, ..., d_kp).

    Attributes:
        variances: Positive error variance per feature.
    """

    variances: FloatArray

    def __post_init__(self) -> None:
        """Validate and freeze the variances."""
        arr = frozen_array(self.variances, ndim=1, name="variances")
        if not np.all(np.isfinite(arr)) or arr.size == 0 or arr.min() < VARIANCE_FLOOR:
            msg = f"Noise variances must be finite and >= {VARIANCE_FLOOR}"
            raise ValueError(msg)
        object.__setattr__(self, "variances", arr)

    @property
    def model(self) -> NoiseModel:
        """Noise structure tag."""
        return NoiseModel.DIAGONAL

    def diagonal(self, p: int) -> FloatArray:
        """Diagonal of D_k for a block with p features."""
        if self.variances.shape[0] != p:
            msg = f"Diagonal noise has {self.variances.shape[0]} entries, block has {p} features"
            raise ShapeError(msg)
        return self.variances.copy()


Noise: TypeAlias = IsotropicNoise | DiagonalNoise


@dataclass(frozen=True)
class MultiBlockData:
    """K aligned data blocks over n common subjects.

    Attributes:
        blocks: Block matrices, block k of shape (p_k, n): features x subjects.
        subject_ids: Optional identifiers for the n subjects (shared by blocks).
        feature_names: Optional feature names per block, length p_k each.
    """

    blocks: tuple[FloatArray, ...]
    subject_ids: tuple[str, ...] | None = None
    feature_names: tuple[tuple[str, ...], ...] | None = None

    def __post_init__(self) -> None:
        """Validate block alignment and finiteness."""
        blocks = tuple(
            frozen_array(b, ndim=2, name=f"block {k}") for k, b in enumerate(self.blocks)
        )
        if len(blocks) < 2:
            msg = f"Multi-block data needs at least 2 blocks, got {len(blocks)}"
            raise ShapeError(msg)
        n = blocks[0].shape[1]
        for k, block in enumerate(blocks):
            if block.shape[1] != n:
                msg = f"Block {k} has {block.shape[1]} subjects, block 0 has {n}"
                raise ShapeError(msg)
            if not np.all(np.isfinite(block)):
                msg = f"Block {k} contains NaN or infinite entries"
                raise ValueError(msg)
        object.__setattr__(self, "blocks", blocks)

        if self.subject_ids is not None:
            ids = tuple(str(s) for s in self.subject_ids)
            if len(ids) != n:
                msg = f"Got {len(ids)} subject ids for {n} subjects"
                raise ShapeError(msg)
            object.__setattr__(self, "subject_ids", ids)

        if self.feature_names is not None:
            names = tuple(tuple(str(f) for f in fn) for fn in self.feature_names)
            if len(names) != len(blocks):
                msg = f"Got feature names for {len(names)} blocks, data has {len(blocks)}"
                raise ShapeError(msg)
            for k, (fn, block) in enumerate(zip(names, blocks, strict=True)):
                if len(fn) != block.shape[0]:
                    msg = f"Block {k} has {block.shape[0]} features but {len(fn)} names"
                    raise ShapeError(msg)
            object.__setattr__(self, "feature_names", names)

    @property
    def n_blocks(self) -> int:
        """Number of blocks K."""
        return len(self.blocks)

    @property
    def n_subjects(self) -> int:
        """Number of subjects n."""
        return int(self.blocks[0].shape[1])

    @property
    def dims(self) -> tuple[int, ...]:
        """Feature count p_k of every block."""
        return tuple(int(b.shape[0]) for b in self.blocks)

    @property
    def p_total(self) -> int:
        """Total number of features across blocks."""
        return sum(self.dims)

    def stacked(self) -> FloatArray:
        """All blocks stacked row-wise: the (p_total, n) matrix of x_i columns."""
        return np.vstack(self.blocks)

    def feature_label(self, k: int, j: int) -> str:
        """Readable name for feature j of block k."""
        if self.feature_names is not None:
            return f"block {k} feature '{self.feature_names[k][j]}'"
        return f"block {k} feature {j}"

    def with_blocks(self, blocks: Sequence[ArrayLike]) -> MultiBlockData:
        """Return a copy holding new block matrices but the same labels."""
        return MultiBlockData(
            blocks=tuple(np.asarray(b, dtype=np.float64) for b in blocks),
            subject_ids=self.subject_ids,
            feature_names=self.feature_names,
        )


@dataclass(frozen=True)
class BlockRanks:
    """Joint rank and individual ranks of a ProJIVE decomposition.

    Attributes:
        r_j: Joint rank r_J.
        r_i: Individual rank r_Ik for every block.
    """

    r_j: int
    r_i: tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        """Validate that all ranks are non-negative integers."""
        r_i = tuple(int(r) for r in self.r_i)
        if int(self.r_j) != self.r_j or self.r_j < 0 or any(r < 0 for r in r_i):
            msg = f"Ranks must be non-negative integers, got r_j={self.r_j}, r_i={r_i}"
            raise RankError(msg)
        object.__setattr__(self, "r_j", int(self.r_j))
        object.__setattr__(self, "r_i", r_i)

    @classmethod
    def parse(cls, text: str) -> BlockRanks:
        """Parse the command-line syntax ``rJ:rI1,rI2,...``.

        Examples:
            >>> BlockRanks.parse("1:2,2")
            BlockRanks(r_j=1, r_i=(2, 2))
        """
        try:
            joint, _, indiv = text.strip().partition(":")
            r_i = tuple(int(tok) for tok in indiv.split(",") if tok.strip())
            return cls(r_j=int(joint), r_i=r_i)
        except ValueError as e:
            msg = f"Invalid ranks '{text}', expected 'rJ:rI1,rI2,...'"
            raise RankError(msg) from e

    def __str__(self) -> str:
        """Inverse of `parse`."""
        return f"{self.r_j}:{','.join(str(r) for r in self.r_i)}"

    @property
    def n_blocks(self) -> int:
        """Number of blocks these ranks describe."""
        return len(self.r_i)

    @property
    def r_total(self) -> int:
        """Total latent dimension r = r_J + sum_k r_Ik."""
        return self.r_j + sum(self.r_i)

    def block_rank(self, k: int) -> int:
        """Signal rank r_J + r_Ik of block k."""
        return self.r_j + self.r_i[k]

    def validate_for(self, dims: Sequence[int], *, require_joint: bool = True) -> None:
        """Check the ranks against block dimensions.

        Args:
            dims: Feature count of every block.
            require_joint: Whether r_J >= 1 is required (it is for fitting).

        Raises:
            RankError: If the ranks cannot describe data of this shape.
        """
        if len(dims) != self.n_blocks:
            msg = f"Ranks describe {self.n_blocks} blocks, data has {len(dims)}"
            raise RankError(msg)
        if require_joint and self.r_j < 1:
            msg = "Joint rank must be at least 1 to fit the model"
            raise RankError(msg)
        for k, p in enumerate(dims):
            if self.block_rank(k) >= p:
                msg = (
                    f"Block {k}: r_J + r_I = {self.block_rank(k)} must be smaller "
                    f"than the number of features ({p})"
                )
                raise RankError(msg)


@dataclass(frozen=True)
class ProjiveParams:
    """Parameters {W_Jk, W_Ik, D_k} of the ProJIVE model.

    Attributes:
        w_joint: Joint loadings, block k of shape (p_k, r_J).
        w_indiv: Individual loadings, block k of shape (p_k, r_Ik).
        noise: Error covariance of every block; all blocks share one structure.
    """

    w_joint: tuple[FloatArray, ...]
    w_indiv: tuple[FloatArray, ...]
    noise: tuple[Noise, ...]

    def __post_init__(self) -> None:
        """Validate shapes and noise structure."""
        w_joint = tuple(frozen_array(w, ndim=2, name=f"W_J{k}") for k, w in enumerate(self.w_joint))
        w_indiv = tuple(frozen_array(w, ndim=2, name=f"W_I{k}") for k, w in enumerate(self.w_indiv))
        noise = tuple(self.noise)

        if not (len(w_joint) == len(w_indiv) == len(noise)) or not w_joint:
            msg = (
                f"Need one joint loading, individual loading and noise term per block, "
                f"got {len(w_joint)}, {len(w_indiv)}, {len(noise)}"
            )
            raise ShapeError(msg)

        r_joint = w_joint[0].shape[1]
        for k, (wj, wi, d) in enumerate(zip(w_joint, w_indiv, noise, strict=True)):
            if wj.shape[1] != r_joint:
                msg = f"W_J{k} has {wj.shape[1]} columns, W_J0 has {r_joint}"
                raise ShapeError(msg)
            if wi.shape[0] != wj.shape[0]:
                msg = f"W_I{k} has {wi.shape[0]} rows, W_J{k} has {wj.shape[0]}"
                raise ShapeError(msg)
            if not (np.all(np.isfinite(wj)) and np.all(np.isfinite(wi))):
                msg = f"Loadings of block {k} contain NaN or infinite entries"
                raise ValueError(msg)
            d.diagonal(wj.shape[0])  # shape check for diagonal noise

        models = {d.model for d in noise}
        if len(models) > 1:
            msg = "All blocks must share the same noise model"
            raise ValueError(msg)

        object.__setattr__(self, "w_joint", w_joint)
        object.__setattr__(self, "w_indiv", w_indiv)
        object.__setattr__(self, "noise", noise)

    @property
    def n_blocks(self) -> int:
        """Number of blocks K."""
        return len(self.w_joint)

    @property
    def dims(self) -> tuple[int, ...]:
        """Feature count p_k of every block."""
        return tuple(int(w.shape[0]) for w in self.w_joint)

    @property
    def ranks(self) -> BlockRanks:
        """Ranks implied by the loading shapes."""
        return BlockRanks(
            r_j=int(self.w_joint[0].shape[1]),
            r_i=tuple(int(w.shape[1]) for w in self.w_indiv),
        )

    @property
    def noise_model(self) -> NoiseModel:
        """Common noise structure of all blocks."""
        return self.noise[0].model

    def noise_diagonal(self, k: int) -> FloatArray:
        """Diagonal of D_k."""
        return self.noise[k].diagonal(self.dims[k])

    def noise_vector(self) -> FloatArray:
        """Diagonal of the stacked block-diagonal D."""
        return np.concatenate([self.noise_diagonal(k) for k in range(self.n_blocks)])

    def block_loadings(self, k: int) -> FloatArray:
        """W_k = [W_Jk | W_Ik] for block k."""
        return np.hstack([self.w_joint[k], self.w_indiv[k]])

    def joint_full_rank(self, tol: float = RANK_TOLERANCE) -> bool:
        """Whether every W_Jk has full column rank r_J.

        The smallest singular value must exceed ``tol`` times the largest.
        """
        for w in self.w_joint:
            if w.shape[1] == 0:
                continue
            s = np.linalg.svd(w, compute_uv=False)
            if s.size < w.shape[1] or s[0] == 0 or s[-1] <= tol * s[0]:
                return False
        return True

    def rotated(
        self,
        joint_rotation: FloatArray | None = None,
        indiv_rotations: Sequence[FloatArray | None] | None = None,
    ) -> ProjiveParams:
        """Right-multiply loadings by the given matrices.

        W_Jk -> W_Jk O for a single O shared by every block, and
        W_Ik -> W_Ik O_k per block. Orthogonal choices leave the model
        covariance unchanged.
        """
        w_joint = self.w_joint
        if joint_rotation is not None:
            w_joint = tuple(w @ joint_rotation for w in self.w_joint)
        w_indiv = self.w_indiv
        if indiv_rotations is not None:
            w_indiv = tuple(
                w if o is None else w @ o
                for w, o in zip(self.w_indiv, indiv_rotations, strict=True)
            )
        return ProjiveParams(w_joint=w_joint, w_indiv=w_indiv, noise=self.noise)


def isotropic_params(
    w_joint: Sequence[ArrayLike],
    w_indiv: Sequence[ArrayLike],
    variances: Sequence[float],
) -> ProjiveParams:
    """Build parameters with isotropic noise from plain arrays."""
    return ProjiveParams(
        w_joint=tuple(np.asarray(w, dtype=np.float64) for w in w_joint),
        w_indiv=tuple(np.asarray(w, dtype=np.float64) for w in w_indiv),
        noise=tuple(IsotropicNoise(float(v)) for v in variances),
    )
