"""The ProJIVE EM loop.

`fit` alternates `e_step` and `m_step` from a starting point until the
relative change in log-likelihood falls below a tolerance:

    |l_t - l_{t-1}| / (|l_{t-1}| + 1) < tol

EM never decreases the likelihood. A drop larger than MONOTONICITY_SLACK is
treated as a numerical defect and raises `MonotonicityError`.

On an exactly low-rank signal the noise variances shrink towards zero until
the model covariance is numerically singular. That boundary ends the loop at
the last valid iterate, counted as converged; a collapse on the very first
update leaves the starting log-likelihood as the only trace entry.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass
from enum import Enum

import numpy as np

from projive.core.constants import (
    CENTERING_TOLERANCE,
    DEFAULT_MAX_ITERS,
    DEFAULT_TOL,
    MONOTONICITY_SLACK,
)
from projive.core.data import BlockRanks, FloatArray, MultiBlockData, NoiseModel, ProjiveParams
from projive.core.errors import MonotonicityError, ProjiveError, RankError, SingularMatrixError
from projive.core.events import EventBus, EventType, emit_fit_iteration, get_event_bus
from projive.core.layout import StackedLayout
from projive.model.initialization import Cholesky, InitStrategy, initialize
from projive.model.likelihood import count_parameters, information_criteria, log_likelihood
from projive.model.steps import PosteriorScores, e_step, m_step

logger = logging.getLogger(__name__)


class TerminationReason(str, Enum):
    """Why the EM loop stopped."""

    TOLERANCE = "tolerance"
    MAX_ITERS = "max_iters"


@dataclass(frozen=True)
class FitResult:
    """Outcome of a ProJIVE fit.

    Attributes:
        params: Final parameters.
        scores: Posterior moments of the latent scores under the final parameters.
        loglik_trace: Log-likelihood after every iteration.
        converged: Whether the tolerance was met.
        iterations: Number of EM iterations run.
        termination_reason: Why the loop stopped.
        aic: Akaike information criterion.
        bic: Bayesian information criterion.
        n_params: Parameter count used by the criteria.
        noise_model: Noise structure that was fit.
    """

    params: ProjiveParams
    scores: PosteriorScores
    loglik_trace: tuple[float, ...]
    converged: bool
    iterations: int
    termination_reason: TerminationReason
    aic: float
    bic: float
    n_params: int
    noise_model: NoiseModel

    @property
    def final_loglik(self) -> float:
        """Log-likelihood of the final parameters."""
        return self.loglik_trace[-1]

    @property
    def ranks(self) -> BlockRanks:
        """Ranks that were fit."""
        return self.params.ranks

    @property
    def layout(self) -> StackedLayout:
        """Stacked layout of the fitted model."""
        return StackedLayout.from_params(self.params)

    def summary(self) -> dict[str, object]:
        """JSON-friendly summary of the fit."""
        return {
            "loglik": self.final_loglik,
            "aic": self.aic,
            "bic": self.bic,
            "iterations": self.iterations,
            "converged": self.converged,
            "termination_reason": self.termination_reason.value,
            "n_params": self.n_params,
            "ranks": str(self.ranks),
            "noise_model": self.noise_model.value,
        }


@dataclass(frozen=True)
class ScoreGroups:
    """Posterior mean scores split into joint and per-block individual groups.

    Attributes:
        joint: Joint scores, shape (n, r_J).
        individual: Individual scores per block, block k of shape (n, r_Ik).
    """

    joint: FloatArray
    individual: tuple[FloatArray, ...]

    def concatenate(self) -> FloatArray:
        """Groups in canonical order (z, b_1, ..., b_K)."""
        return np.hstack([self.joint, *self.individual])


def _warn_if_uncentered(data: MultiBlockData) -> None:
    for k, block in enumerate(data.blocks):
        worst = float(np.abs(block.mean(axis=1)).max(initial=0.0))
        if worst > CENTERING_TOLERANCE:
            logger.warning(
                "Block %d is not centered (largest feature mean %.3g); the model assumes centered data",
                k,
                worst,
            )


def fit(
    data: MultiBlockData,
    ranks: BlockRanks,
    strategy: InitStrategy | None = None,
    noise_model: NoiseModel | str = NoiseModel.ISOTROPIC,
    tol: float = DEFAULT_TOL,
    max_iters: int = DEFAULT_MAX_ITERS,
    *,
    bus: EventBus | None = None,
    source: str = "fit",
) -> FitResult:
    """Fit the ProJIVE model by EM.

    Args:
        data: Observations, ideally centered (see `projive.stats.preprocess`).
        ranks: Joint rank (>= 1) and individual ranks.
        strategy: Initialization strategy; Cholesky if None.
        noise_model: Isotropic or diagonal D_k.
        tol: Relative log-likelihood change that stops the loop.
        max_iters: Iteration cap.
        bus: Event bus for telemetry (global bus if None).
        source: Source name attached to emitted events.

    Returns:
        The fit result; `converged` is False if max_iters was reached.

    Raises:
        ValueError: If tol or max_iters is out of range.
        RankError: If ranks are invalid or the starting joint loadings are rank deficient.
        MonotonicityError: If an iteration decreases the log-likelihood beyond slack.
        SingularMatrixError: If the starting covariance or a moment matrix is singular.
    """
    if not tol > 0:
        msg = f"tol must be positive, got {tol}"
        raise ValueError(msg)
    if max_iters < 1:
        msg = f"max_iters must be at least 1, got {max_iters}"
        raise ValueError(msg)
    noise_model = NoiseModel(noise_model)
    strategy = strategy if strategy is not None else Cholesky()
    bus = bus or get_event_bus()

    ranks.validate_for(data.dims, require_joint=True)
    _warn_if_uncentered(data)

    params = initialize(data, ranks, strategy, noise_model)
    if not params.joint_full_rank():
        msg = "Starting joint loadings do not have full column rank in every block"
        raise RankError(msg)
    layout = StackedLayout.from_ranks(data.dims, ranks)

    bus.emit_simple(
        EventType.FIT_START,
        source=source,
        message=f"fitting ranks {ranks} with {noise_model.value} noise",
        ranks=str(ranks),
        noise_model=noise_model.value,
        strategy=type(strategy).__name__,
    )
    logger.info(
        "Fitting ranks %s (%s noise, %s start) on %d subjects",
        ranks,
        noise_model.value,
        type(strategy).__name__,
        data.n_subjects,
    )

    previous = log_likelihood(data, params)
    trace: list[float] = []
    reason = TerminationReason.MAX_ITERS
    for iteration in range(1, max_iters + 1):
        scores = e_step(data, params)
        update = m_step(data, scores, layout, noise_model, bus=bus)
        try:
            current = log_likelihood(data, update)
        except SingularMatrixError as e:
            # noise collapsed onto an exactly low-rank signal
            logger.warning(
                "Noise variance reached the boundary at iteration %d; keeping the previous iterate (%s)",
                iteration,
                e,
            )
            reason = TerminationReason.TOLERANCE
            break
        params = update
        trace.append(current)

        if current < previous - MONOTONICITY_SLACK * (abs(previous) + 1.0):
            msg = (
                f"Log-likelihood decreased at iteration {iteration}: "
                f"{previous:.12g} -> {current:.12g}"
            )
            raise MonotonicityError(msg)

        rel_change = abs(current - previous) / (abs(previous) + 1.0)
        emit_fit_iteration(source, iteration, current, rel_change, bus=bus)
        logger.debug("Iteration %d: loglik=%.10g rel_change=%.3g", iteration, current, rel_change)
        if rel_change < tol:
            reason = TerminationReason.TOLERANCE
            break
        previous = current

    if not trace:
        trace.append(previous)
    scores = e_step(data, params)
    if not params.joint_full_rank():
        logger.warning("Fitted joint loadings are rank deficient in at least one block")

    n_params = count_parameters(data.dims, ranks, noise_model)
    aic, bic = information_criteria(trace[-1], n_params, data.n_subjects)
    converged = reason is TerminationReason.TOLERANCE

    if converged:
        bus.emit_simple(
            EventType.FIT_CONVERGED,
            source=source,
            message=f"converged after {len(trace)} iterations",
            iterations=len(trace),
            loglik=trace[-1],
        )
        logger.info("Converged after %d iterations, loglik=%.10g", len(trace), trace[-1])
    else:
        bus.emit_simple(
            EventType.FIT_MAX_ITERS,
            source=source,
            message=f"stopped at max_iters={max_iters}",
            iterations=len(trace),
            loglik=trace[-1],
        )
        logger.warning("Stopped at max_iters=%d without convergence (loglik=%.10g)", max_iters, trace[-1])

    return FitResult(
        params=params,
        scores=scores,
        loglik_trace=tuple(trace),
        converged=converged,
        iterations=len(trace),
        termination_reason=reason,
        aic=aic,
        bic=bic,
        n_params=n_params,
        noise_model=noise_model,
    )


def fit_multistart(
    data: MultiBlockData,
    ranks: BlockRanks,
    strategies: Sequence[InitStrategy],
    noise_model: NoiseModel | str = NoiseModel.ISOTROPIC,
    tol: float = DEFAULT_TOL,
    max_iters: int = DEFAULT_MAX_ITERS,
    *,
    bus: EventBus | None = None,
    source: str = "fit",
) -> FitResult:
    """Fit from several starts and keep the highest final log-likelihood.

    Starts that fail with a library error are logged and skipped; ties keep
    the earliest start. Start i reports its events as `source[i]`.

    Raises:
        ValueError: If no strategies are given.
        ProjiveError: If every start fails.
    """
    if not strategies:
        msg = "fit_multistart needs at least one strategy"
        raise ValueError(msg)
    best: FitResult | None = None
    last_error: ProjiveError | None = None
    for index, strategy in enumerate(strategies):
        try:
            result = fit(data, ranks, strategy, noise_model, tol, max_iters, bus=bus, source=f"{source}[{index}]")
        except ProjiveError as e:
            logger.warning("Start %d (%s) failed: %s", index, type(strategy).__name__, e)
            last_error = e
            continue
        if best is None or result.final_loglik > best.final_loglik:
            best = result
    if best is None:
        msg = f"All {len(strategies)} starts failed; last error: {last_error}"
        raise ProjiveError(msg) from last_error
    return best


def fit_starts(
    data: MultiBlockData,
    ranks: BlockRanks,
    strategies: Sequence[InitStrategy],
    noise_model: NoiseModel | str = NoiseModel.ISOTROPIC,
    tol: float = DEFAULT_TOL,
    max_iters: int = DEFAULT_MAX_ITERS,
    *,
    bus: EventBus | None = None,
    source: str = "fit",
) -> FitResult:
    """`fit` for a single start, `fit_multistart` for several.

    A single start keeps the specific error type of `fit`.
    """
    if len(strategies) == 1:
        return fit(data, ranks, strategies[0], noise_model, tol, max_iters, bus=bus, source=source)
    return fit_multistart(data, ranks, strategies, noise_model, tol, max_iters, bus=bus, source=source)


def extract_scores(result: FitResult, layout: StackedLayout | None = None) -> ScoreGroups:
    """Split the posterior mean into joint and individual score groups."""
    layout = layout or result.layout
    mean = result.scores.mean
    return ScoreGroups(
        joint=mean[:, layout.joint_cols()],
        individual=tuple(mean[:, layout.indiv_cols(k)] for k in range(layout.n_blocks)),
    )
