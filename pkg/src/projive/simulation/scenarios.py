"""Simulated multi-block data from the ProJIVE generative model.

Each block is built as X_k = d_k J_k + c_k A_k + E_k with

    J_k = W_Jk Z^T     W_Jk = R_Jk Q_J   (joint, shared scores Z)
    A_k = W_Ik B_k^T   W_Ik = R_Ik Q_I   (individual, block scores B_k)
    E_k ~ standard normal

and d_k, c_k calibrated so that the joint and individual Frobenius shares of
X_k hit their targets (see `projive.simulation.calibration`). Scores and
noise are centered over subjects before calibration, so every block
satisfies X_k 1 = 0 and the shares refer to centered matrices.

Draw order from one `numpy.random.default_rng(seed)` is fixed: joint scores,
then for every block its joint loadings, individual loadings, individual
scores and noise. Same seed, same data, bit for bit.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Annotated, Any

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from projive.core.constants import VARIANCE_FLOOR
from projive.core.data import FloatArray, IsotropicNoise, MultiBlockData, ProjiveParams, frozen_array
from projive.simulation.calibration import ScaleConstants, solve_scale_constants

logger = logging.getLogger(__name__)

#: Mixture used for joint scores in the non-Gaussian design.
MIXTURE_WEIGHTS = (0.2, 0.5, 0.3)
MIXTURE_MEANS = (-4.0, 0.0, 4.0)
MIXTURE_SDS = (1.0, 1.0, 1.0)

#: Default diagonal scales of joint and individual loadings; extra columns get 1.
DEFAULT_Q_JOINT = (3.0, 2.0, 1.0)
DEFAULT_Q_INDIV = (2.0, 1.0)


class ScoreDist(str, Enum):
    """Distribution of the joint scores."""

    GAUSSIAN = "gaussian"
    MIXTURE = "mixture"


class LoadingDist(str, Enum):
    """Distribution of the unscaled loading entries."""

    GAUSSIAN = "gaussian"
    RADEMACHER = "rademacher"


def _scales(default: tuple[float, ...], r: int) -> tuple[float, ...]:
    return tuple(default[:r]) + (1.0,) * max(0, r - len(default))


class SimScenario(BaseModel):
    """One cell of a simulation design.

    A target share of 0 goes with a rank of 0 and vice versa; every other
    target lies in (0, 1).
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str = Field(default="scenario", description="Label used in reports")
    n: Annotated[int, Field(ge=2, description="Number of subjects")] = 1000
    p: tuple[int, ...] = Field(default=(20, 20), min_length=2, description="Features per block")
    r_j: Annotated[int, Field(ge=0, description="Joint rank")] = 1
    r_i: tuple[int, ...] = Field(default=(2, 2), description="Individual rank per block")
    target_r2_joint: tuple[float, ...] = Field(default=(0.5, 0.5))
    target_r2_indiv: tuple[float, ...] = Field(default=(0.25, 0.25))
    score_dist: ScoreDist = ScoreDist.GAUSSIAN
    loading_dist: LoadingDist = LoadingDist.GAUSSIAN
    q_joint: tuple[float, ...] | None = Field(default=None, description="Joint loading scales; default 3, 2, 1")
    q_indiv: tuple[float, ...] | None = Field(default=None, description="Individual loading scales; default 2, 1")
    seed: int = 0

    @model_validator(mode="after")
    def validate_design(self) -> SimScenario:
        """Check per-block lengths, ranks and target shares."""
        k = len(self.p)
        for label, values in (
            ("r_i", self.r_i),
            ("target_r2_joint", self.target_r2_joint),
            ("target_r2_indiv", self.target_r2_indiv),
        ):
            if len(values) != k:
                msg = f"{label} has {len(values)} entries for {k} blocks"
                raise ValueError(msg)
        if any(r < 0 for r in self.r_i) or any(p < 1 for p in self.p):
            msg = "Ranks must be non-negative and block sizes positive"
            raise ValueError(msg)
        for b in range(k):
            tj, ti = self.target_r2_joint[b], self.target_r2_indiv[b]
            if not (0 <= tj < 1 and 0 <= ti < 1 and tj + ti < 1):
                msg = f"Block {b}: targets ({tj}, {ti}) must lie in [0, 1) and sum below 1"
                raise ValueError(msg)
            if (tj == 0) != (self.r_j == 0) or (ti == 0) != (self.r_i[b] == 0):
                msg = f"Block {b}: a target share is 0 exactly when its rank is 0"
                raise ValueError(msg)
        if self.q_joint is not None and len(self.q_joint) != self.r_j:
            msg = f"q_joint has {len(self.q_joint)} entries for r_j = {self.r_j}"
            raise ValueError(msg)
        if self.q_indiv is not None and len(self.q_indiv) < max(self.r_i, default=0):
            msg = f"q_indiv needs at least {max(self.r_i)} entries"
            raise ValueError(msg)
        return self

    @property
    def n_blocks(self) -> int:
        """Number of blocks K."""
        return len(self.p)

    def joint_scales(self) -> tuple[float, ...]:
        """Diagonal of Q_J."""
        return self.q_joint if self.q_joint is not None else _scales(DEFAULT_Q_JOINT, self.r_j)

    def indiv_scales(self, k: int) -> tuple[float, ...]:
        """Diagonal of Q_I for block k."""
        base = self.q_indiv if self.q_indiv is not None else DEFAULT_Q_INDIV
        return _scales(base, self.r_i[k])

    def with_seed(self, seed: int) -> SimScenario:
        """Copy with another seed."""
        return self.model_copy(update={"seed": seed})

    def labels(self) -> dict[str, Any]:
        """Design factors for report rows."""
        return {
            "scenario": self.name,
            "r_j": self.r_j,
            "p2": self.p[1],
            "r2_j1": self.target_r2_joint[0],
            "r2_j2": self.target_r2_joint[1],
            "distribution": f"{self.score_dist.value}/{self.loading_dist.value}",
        }


@dataclass(frozen=True)
class SimTruth:
    """A simulated dataset together with everything that generated it.

    Attributes:
        data: Blocks X_k = joint_matrices[k] + indiv_matrices[k] + noise[k].
        joint_scores: Z, (n, r_J).
        indiv_scores: B_k per block, (n, r_Ik).
        joint_loadings: d_k W_Jk per block, (p_k, r_J).
        indiv_loadings: c_k W_Ik per block, (p_k, r_Ik).
        joint_matrices: d_k J_k per block.
        indiv_matrices: c_k A_k per block.
        noise: E_k per block.
        achieved_r2: Per block (R2_J, R2_I) of the stored matrices.
        scale_constants: Per block (d_k, c_k).
        noise_sd: Standard deviation of the noise entries.
        scenario: Design that produced the data, if any.
        label: Free-form description (design name for non-scenario generators).
        seed: Seed the random draws came from.
    """

    data: MultiBlockData
    joint_scores: FloatArray
    indiv_scores: tuple[FloatArray, ...]
    joint_loadings: tuple[FloatArray, ...]
    indiv_loadings: tuple[FloatArray, ...]
    joint_matrices: tuple[FloatArray, ...]
    indiv_matrices: tuple[FloatArray, ...]
    noise: tuple[FloatArray, ...]
    achieved_r2: tuple[tuple[float, float], ...]
    scale_constants: tuple[ScaleConstants, ...]
    noise_sd: float = 1.0
    scenario: SimScenario | None = None
    label: str = ""
    seed: int | None = None

    def __post_init__(self) -> None:
        """Freeze component arrays."""
        object.__setattr__(self, "joint_scores", frozen_array(self.joint_scores, ndim=2, name="joint scores"))
        for name in ("indiv_scores", "joint_loadings", "indiv_loadings", "joint_matrices", "indiv_matrices", "noise"):
            arrays = tuple(frozen_array(m, ndim=2, name=name) for m in getattr(self, name))
            object.__setattr__(self, name, arrays)

    @property
    def n_blocks(self) -> int:
        """Number of blocks K."""
        return self.data.n_blocks

    def true_params(self, noise_variance: float | None = None) -> ProjiveParams:
        """Generating parameters, usable as a `Provided` ("oracle") start.

        Args:
            noise_variance: Isotropic variance per block; defaults to noise_sd^2,
                floored at VARIANCE_FLOOR so noiseless designs stay valid.
        """
        variance = self.noise_sd**2 if noise_variance is None else noise_variance
        variance = max(variance, VARIANCE_FLOOR)
        return ProjiveParams(
            w_joint=self.joint_loadings,
            w_indiv=self.indiv_loadings,
            noise=tuple(IsotropicNoise(variance) for _ in range(self.n_blocks)),
        )


def replicate_seed(seed: int, index: int) -> int:
    """Seed of replicate `index` derived from a base seed.

    Uses `numpy.random.SeedSequence([seed, index])`, so neighbouring indices
    give unrelated streams.
    """
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def _draw_loadings(rng: np.random.Generator, shape: tuple[int, int], dist: LoadingDist) -> FloatArray:
    if dist is LoadingDist.RADEMACHER:
        return rng.integers(0, 2, size=shape).astype(np.float64) * 2.0 - 1.0
    return rng.standard_normal(shape)


def draw_joint_scores(rng: np.random.Generator, n: int, r: int, dist: ScoreDist) -> FloatArray:
    """Joint scores: standard normal or the three-component normal mixture."""
    if dist is ScoreDist.MIXTURE:
        component = rng.choice(len(MIXTURE_WEIGHTS), size=(n, r), p=MIXTURE_WEIGHTS)
        means = np.asarray(MIXTURE_MEANS)[component]
        sds = np.asarray(MIXTURE_SDS)[component]
        return means + sds * rng.standard_normal((n, r))
    return rng.standard_normal((n, r))


def center_subjects(matrix: FloatArray, *, axis: int) -> FloatArray:
    """Subtract the mean over subjects; `axis` is the subject axis."""
    return matrix - matrix.mean(axis=axis, keepdims=True)


def assemble_truth(
    joint_scores: FloatArray,
    indiv_scores: list[FloatArray],
    joint_loadings: list[FloatArray],
    indiv_loadings: list[FloatArray],
    noise: list[FloatArray],
    constants: list[ScaleConstants],
    *,
    noise_sd: float = 1.0,
    scenario: SimScenario | None = None,
    label: str = "",
    seed: int | None = None,
) -> SimTruth:
    """Scale the components, add them up and record achieved shares."""
    joint_matrices: list[FloatArray] = []
    indiv_matrices: list[FloatArray] = []
    blocks: list[FloatArray] = []
    achieved: list[tuple[float, float]] = []
    for k, sc in enumerate(constants):
        jm = (sc.d * joint_loadings[k]) @ joint_scores.T
        im = (sc.c * indiv_loadings[k]) @ indiv_scores[k].T
        x = jm + im + noise[k]
        total = float(np.sum(x * x))
        joint_matrices.append(jm)
        indiv_matrices.append(im)
        blocks.append(x)
        achieved.append((float(np.sum(jm * jm)) / total, float(np.sum(im * im)) / total))
    return SimTruth(
        data=MultiBlockData(blocks=tuple(blocks)),
        joint_scores=joint_scores,
        indiv_scores=tuple(indiv_scores),
        joint_loadings=tuple(sc.d * w for sc, w in zip(constants, joint_loadings, strict=True)),
        indiv_loadings=tuple(sc.c * w for sc, w in zip(constants, indiv_loadings, strict=True)),
        joint_matrices=tuple(joint_matrices),
        indiv_matrices=tuple(indiv_matrices),
        noise=tuple(noise),
        achieved_r2=tuple(achieved),
        scale_constants=tuple(constants),
        noise_sd=noise_sd,
        scenario=scenario,
        label=label,
        seed=seed,
    )


def generate(scenario: SimScenario) -> SimTruth:
    """Draw one dataset for a scenario.

    Raises:
        CalibrationError: If the scale constants of a block cannot be solved.
    """
    rng = np.random.default_rng(scenario.seed)
    n = scenario.n
    z = center_subjects(draw_joint_scores(rng, n, scenario.r_j, scenario.score_dist), axis=0)
    q_joint = np.asarray(scenario.joint_scales())

    w_joint: list[FloatArray] = []
    w_indiv: list[FloatArray] = []
    scores: list[FloatArray] = []
    noise: list[FloatArray] = []
    constants: list[ScaleConstants] = []
    for k, p in enumerate(scenario.p):
        r_i = scenario.r_i[k]
        wj = _draw_loadings(rng, (p, scenario.r_j), scenario.loading_dist) * q_joint
        wi = _draw_loadings(rng, (p, r_i), scenario.loading_dist) * np.asarray(scenario.indiv_scales(k))
        b = center_subjects(rng.standard_normal((n, r_i)), axis=0)
        e = center_subjects(rng.standard_normal((p, n)), axis=1)
        constants.append(
            solve_scale_constants(
                wj @ z.T,
                wi @ b.T,
                e,
                scenario.target_r2_joint[k],
                scenario.target_r2_indiv[k],
            )
        )
        w_joint.append(wj)
        w_indiv.append(wi)
        scores.append(b)
        noise.append(e)

    truth = assemble_truth(
        z, scores, w_joint, w_indiv, noise, constants, scenario=scenario, label=scenario.name, seed=scenario.seed
    )
    logger.debug("Generated %s (seed %d): achieved R2 %s", scenario.name, scenario.seed, truth.achieved_r2)
    return truth


def factorial_grid(
    n: int = 1000,
    p1: int = 20,
    p2_levels: tuple[int, ...] = (20, 200),
    r_j_levels: tuple[int, ...] = (1, 3),
    r2_levels: tuple[float, ...] = (0.1, 0.5),
    r2_indiv: float = 0.25,
    r_i: tuple[int, int] = (2, 2),
    seed: int = 0,
) -> list[SimScenario]:
    """Every cell of the two-block factorial simulation design.

    Factors: joint rank, size of block 2, joint share of each block, and the
    distribution setting (Gaussian scores and loadings, or mixture scores with
    Rademacher loadings). Cell c is seeded with `replicate_seed(seed, c)`.
    """
    cells: list[SimScenario] = []
    settings = (
        (ScoreDist.GAUSSIAN, LoadingDist.GAUSSIAN),
        (ScoreDist.MIXTURE, LoadingDist.RADEMACHER),
    )
    for index, (r_j, p2, r2_1, r2_2, (scores, loadings)) in enumerate(
        itertools.product(r_j_levels, p2_levels, r2_levels, r2_levels, settings)
    ):
        cells.append(
            SimScenario(
                name=f"rJ{r_j}_p2-{p2}_R2J-{r2_1:g}-{r2_2:g}_{scores.value}",
                n=n,
                p=(p1, p2),
                r_j=r_j,
                r_i=r_i,
                target_r2_joint=(r2_1, r2_2),
                target_r2_indiv=(r2_indiv, r2_indiv),
                score_dist=scores,
                loading_dist=loadings,
                seed=replicate_seed(seed, index),
            )
        )
    return cells
