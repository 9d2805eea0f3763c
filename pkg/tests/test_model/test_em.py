"""Tests for the EM loop."""

from __future__ import annotations

from collections.abc import Callable

import numpy as np
import pytest

from projive.core.data import BlockRanks, FloatArray, MultiBlockData, NoiseModel, ProjiveParams, isotropic_params
from projive.core.errors import ProjiveError, RankError, ShapeError
from projive.core.events import EventBus, EventType
from projive.core.layout import model_covariance
from projive.model.em import TerminationReason, extract_scores, fit, fit_multistart, fit_starts
from projive.model.initialization import Cholesky, Provided, RandomNormal
from projive.model.likelihood import log_likelihood


def _assert_monotone(trace: tuple[float, ...]) -> None:
    for previous, current in zip(trace, trace[1:], strict=False):
        assert current >= previous - 1e-8 * (abs(previous) + 1.0)


def _noiseless_blocks(loadings: dict[str, list[FloatArray]] | None = None) -> MultiBlockData:
    """Blocks of 6 and 7 features that are exactly rank 2 with a shared score."""
    rng = np.random.default_rng(17)
    n = 200
    z = rng.standard_normal((n, 1))
    z -= z.mean(axis=0)
    joint = [rng.standard_normal((p, 1)) for p in (6, 7)]
    indiv = [rng.standard_normal((p, 1)) for p in (6, 7)]
    blocks: list[FloatArray] = []
    for wj, wi in zip(joint, indiv, strict=True):
        b = rng.standard_normal((n, 1))
        b -= b.mean(axis=0)
        blocks.append(wj @ z.T + wi @ b.T)
    if loadings is not None:
        loadings["joint"] = joint
        loadings["indiv"] = indiv
    return MultiBlockData(blocks=tuple(blocks))


def _random_instance(seed: int, n_blocks: int, n: int = 120) -> tuple[MultiBlockData, BlockRanks]:
    """Data drawn from random isotropic parameters with random ranks."""
    rng = np.random.default_rng(seed)
    dims = [int(p) for p in rng.integers(5, 9, size=n_blocks)]
    ranks = BlockRanks(r_j=int(rng.integers(1, 3)), r_i=tuple(int(r) for r in rng.integers(0, 3, size=n_blocks)))
    params = isotropic_params(
        [rng.standard_normal((p, ranks.r_j)) for p in dims],
        [rng.standard_normal((p, r)) for p, r in zip(dims, ranks.r_i, strict=True)],
        [float(v) for v in rng.uniform(0.2, 2.0, size=n_blocks)],
    )
    x = rng.multivariate_normal(np.zeros(sum(dims)), model_covariance(params), size=n).T
    x -= x.mean(axis=1, keepdims=True)
    return MultiBlockData(blocks=tuple(np.split(x, np.cumsum(dims)[:-1], axis=0))), ranks


class TestFit:
    """Tests for fit."""

    def test_converges_monotonically(self, small_data: MultiBlockData, small_ranks: BlockRanks) -> None:
        """The trace never decreases and the tolerance is met."""
        result = fit(small_data, small_ranks, tol=1e-6)

        assert result.converged
        assert result.termination_reason is TerminationReason.TOLERANCE
        assert result.iterations == len(result.loglik_trace)
        _assert_monotone(result.loglik_trace)

    def test_oracle_start_never_loses(self, small_data: MultiBlockData, small_params: ProjiveParams) -> None:
        """Starting at the truth, EM ends at least as high."""
        start = log_likelihood(small_data, small_params)
        result = fit(small_data, small_params.ranks, Provided(small_params), tol=1e-8)

        assert result.final_loglik >= start - 1e-8 * abs(start)

    def test_noise_floor_data(
        self,
        make_params: Callable[..., ProjiveParams],
        sample_data: Callable[..., MultiBlockData],
    ) -> None:
        """Near noiseless data still give a monotone trace."""
        ranks = BlockRanks(r_j=1, r_i=(1, 1))
        data = sample_data(make_params((5, 5), ranks, variances=[1e-6, 1e-6]), 100)
        result = fit(data, ranks, tol=1e-10, max_iters=300)

        _assert_monotone(result.loglik_trace)

    def test_max_iters(self, small_data: MultiBlockData, small_ranks: BlockRanks) -> None:
        """Hitting the cap is a result, not an error."""
        bus = EventBus()
        result = fit(small_data, small_ranks, RandomNormal(seed=1), max_iters=2, tol=1e-14, bus=bus)

        assert not result.converged
        assert result.termination_reason is TerminationReason.MAX_ITERS
        assert result.iterations == 2
        assert len(bus.get_history(EventType.FIT_MAX_ITERS)) == 1

    def test_events(self, small_data: MultiBlockData, small_ranks: BlockRanks) -> None:
        """One start event, one event per iteration, one convergence event."""
        bus = EventBus()
        result = fit(small_data, small_ranks, tol=1e-5, bus=bus, source="unit")

        assert len(bus.get_history(EventType.FIT_START, source="unit")) == 1
        assert len(bus.get_history(EventType.FIT_ITERATION)) == result.iterations
        assert len(bus.get_history(EventType.FIT_CONVERGED)) == 1

    def test_deterministic(self, small_data: MultiBlockData, small_ranks: BlockRanks) -> None:
        """Same data and seed give bit-identical fits."""
        first = fit(small_data, small_ranks, RandomNormal(seed=9), max_iters=50)
        second = fit(small_data, small_ranks, RandomNormal(seed=9), max_iters=50)

        assert first.loglik_trace == second.loglik_trace
        np.testing.assert_array_equal(first.params.w_joint[0], second.params.w_joint[0])

    def test_criteria(self, small_data: MultiBlockData, small_ranks: BlockRanks) -> None:
        """AIC and BIC use the final log-likelihood."""
        result = fit(small_data, small_ranks, tol=1e-5)

        assert result.aic == pytest.approx(-2.0 * result.final_loglik + 2.0 * result.n_params)
        assert result.summary()["ranks"] == "1:1,2"

    def test_diagonal_noise(self, small_data: MultiBlockData, small_ranks: BlockRanks) -> None:
        """The diagonal model fits and keeps per-feature variances."""
        result = fit(small_data, small_ranks, noise_model="diagonal", tol=1e-5)

        assert result.noise_model is NoiseModel.DIAGONAL
        assert result.params.noise_vector().shape == (14,)
        _assert_monotone(result.loglik_trace)

    @pytest.mark.parametrize(("tol", "max_iters"), [(0.0, 10), (1e-6, 0)])
    def test_bad_controls(
        self, small_data: MultiBlockData, small_ranks: BlockRanks, tol: float, max_iters: int
    ) -> None:
        """tol and max_iters are range checked."""
        with pytest.raises(ValueError):
            fit(small_data, small_ranks, tol=tol, max_iters=max_iters)

    def test_zero_joint_rank(self, small_data: MultiBlockData) -> None:
        """The model cannot be fit without a joint component."""
        with pytest.raises(RankError):
            fit(small_data, BlockRanks(r_j=0, r_i=(1, 2)))

    def test_rank_deficient_start(self, small_data: MultiBlockData, rng: np.random.Generator) -> None:
        """A start with zero joint loadings in one block is refused."""
        start = isotropic_params(
            [np.zeros((6, 1)), rng.standard_normal((8, 1))],
            [rng.standard_normal((6, 1)), rng.standard_normal((8, 2))],
            [1.0, 1.0],
        )
        with pytest.raises(RankError, match="full column rank"):
            fit(small_data, start.ranks, Provided(start))

    def test_uncentered_warning(
        self, small_data: MultiBlockData, small_ranks: BlockRanks, caplog: pytest.LogCaptureFixture
    ) -> None:
        """Fitting uncentered data logs a warning."""
        shifted = small_data.with_blocks([b + 1.0 for b in small_data.blocks])
        fit(shifted, small_ranks, max_iters=3)

        assert "not centered" in caplog.text

    def test_noiseless_signal_stops_at_boundary(self) -> None:
        """Exactly low-rank blocks end by tolerance with a monotone trace."""
        data = _noiseless_blocks()
        result = fit(data, BlockRanks(r_j=1, r_i=(1, 1)), tol=1e-8)

        assert result.converged
        assert result.termination_reason is TerminationReason.TOLERANCE
        assert np.isfinite(result.final_loglik)
        _assert_monotone(result.loglik_trace)

    def test_noiseless_signal_from_truth(self, caplog: pytest.LogCaptureFixture) -> None:
        """Started at the generating loadings the noise collapses and the last valid iterate is kept."""
        loadings: dict[str, list[FloatArray]] = {}
        data = _noiseless_blocks(loadings)
        start = isotropic_params(loadings["joint"], loadings["indiv"], [1e-6, 1e-6])
        result = fit(data, start.ranks, Provided(start), tol=1e-8)

        assert result.converged
        assert "reached the boundary" in caplog.text
        assert result.params.noise_vector().max() < 1e-6
        assert result.iterations == len(result.loglik_trace)
        assert result.final_loglik == pytest.approx(log_likelihood(data, result.params), rel=1e-9)
        _assert_monotone(result.loglik_trace)


class TestFitProperties:
    """Randomized monotonicity and stationarity checks."""

    @pytest.mark.slow
    @pytest.mark.parametrize("n_blocks", [2, 3])
    @pytest.mark.parametrize("noise_model", [NoiseModel.ISOTROPIC, NoiseModel.DIAGONAL])
    @pytest.mark.parametrize("random_start", [False, True])
    def test_monotone_on_random_instances(self, n_blocks: int, noise_model: NoiseModel, random_start: bool) -> None:
        """Every iteration keeps or raises the log-likelihood."""
        for seed in range(5):
            data, ranks = _random_instance(100 * n_blocks + seed, n_blocks)
            strategy = RandomNormal(seed=seed) if random_start else Cholesky()
            result = fit(data, ranks, strategy, noise_model, tol=1e-9, max_iters=300)

            _assert_monotone(result.loglik_trace)

    @pytest.mark.slow
    def test_stationary_at_convergence(
        self,
        make_params: Callable[..., ProjiveParams],
        sample_data: Callable[..., MultiBlockData],
    ) -> None:
        """Central differences of the log-likelihood vanish at every loading entry."""
        ranks = BlockRanks(r_j=1, r_i=(1, 1))
        data = sample_data(make_params((4, 4), ranks), 300)
        result = fit(data, ranks, tol=1e-12, max_iters=20_000)
        params = result.params
        variances = [float(params.noise_diagonal(k)[0]) for k in range(2)]

        gradients: list[float] = []
        for group in ("w_joint", "w_indiv"):
            for k in range(2):
                for index in np.ndindex(getattr(params, group)[k].shape):
                    step = 1e-5 * max(abs(float(getattr(params, group)[k][index])), 1.0)
                    values: list[float] = []
                    for sign in (1.0, -1.0):
                        loadings = {
                            "w_joint": [w.copy() for w in params.w_joint],
                            "w_indiv": [w.copy() for w in params.w_indiv],
                        }
                        loadings[group][k][index] += sign * step
                        moved = isotropic_params(loadings["w_joint"], loadings["w_indiv"], variances)
                        values.append(log_likelihood(data, moved))
                    gradients.append((values[0] - values[1]) / (2.0 * step) / data.n_subjects)

        assert len(gradients) == 16
        assert max(abs(g) for g in gradients) < 1e-3


class TestMultistart:
    """Tests for fit_multistart."""

    def test_keeps_best(self, small_data: MultiBlockData, small_ranks: BlockRanks) -> None:
        """The best final log-likelihood wins."""
        strategies = [RandomNormal(seed=s) for s in range(3)]
        best = fit_multistart(small_data, small_ranks, strategies, max_iters=20)
        singles = [fit(small_data, small_ranks, s, max_iters=20).final_loglik for s in strategies]

        assert best.final_loglik == max(singles)

    def test_failed_start_skipped(
        self, small_data: MultiBlockData, small_ranks: BlockRanks, make_params: Callable[..., ProjiveParams]
    ) -> None:
        """A failing start is logged and the others still run."""
        wrong = Provided(make_params((6, 8), BlockRanks(r_j=1, r_i=(1, 1))))
        result = fit_multistart(small_data, small_ranks, [wrong, Cholesky()], max_iters=10)

        assert result.ranks == small_ranks

    def test_all_fail(
        self, small_data: MultiBlockData, small_ranks: BlockRanks, make_params: Callable[..., ProjiveParams]
    ) -> None:
        """If every start fails a ProjiveError is raised."""
        wrong = Provided(make_params((6, 8), BlockRanks(r_j=1, r_i=(1, 1))))
        with pytest.raises(ProjiveError, match="All 1 starts failed"):
            fit_multistart(small_data, small_ranks, [wrong])

    def test_needs_strategies(self, small_data: MultiBlockData, small_ranks: BlockRanks) -> None:
        """An empty strategy list is a ValueError."""
        with pytest.raises(ValueError):
            fit_multistart(small_data, small_ranks, [])


class TestFitStarts:
    """Tests for fit_starts."""

    def test_single_start_is_plain_fit(self, small_data: MultiBlockData, small_ranks: BlockRanks) -> None:
        """One start runs fit under the given source."""
        bus = EventBus()
        result = fit_starts(small_data, small_ranks, [Cholesky()], tol=1e-6, bus=bus, source="unit")

        assert result.final_loglik == fit(small_data, small_ranks, Cholesky(), tol=1e-6).final_loglik
        assert len(bus.get_history(EventType.FIT_START, source="unit")) == 1

    def test_single_start_keeps_error_type(
        self, small_data: MultiBlockData, small_ranks: BlockRanks, make_params: Callable[..., ProjiveParams]
    ) -> None:
        """A lone failing start raises the specific error, not the multistart summary."""
        wrong = Provided(make_params((6, 8), BlockRanks(r_j=1, r_i=(1, 1))))
        with pytest.raises(ShapeError):
            fit_starts(small_data, small_ranks, [wrong])

    def test_several_starts_keep_best(self, small_data: MultiBlockData, small_ranks: BlockRanks) -> None:
        """Several starts each report under an indexed source and the best fit is kept."""
        bus = EventBus()
        strategies = [Cholesky(), RandomNormal(seed=2)]
        result = fit_starts(small_data, small_ranks, strategies, max_iters=30, bus=bus, source="unit")
        singles = [fit(small_data, small_ranks, s, max_iters=30).final_loglik for s in strategies]

        assert result.final_loglik == max(singles)
        assert [e.source for e in bus.get_history(EventType.FIT_START)] == ["unit[0]", "unit[1]"]


class TestExtractScores:
    """Tests for extract_scores."""

    def test_groups(self, small_data: MultiBlockData, small_ranks: BlockRanks) -> None:
        """Groups split the posterior mean in canonical order."""
        result = fit(small_data, small_ranks, max_iters=5)
        groups = extract_scores(result)

        assert groups.joint.shape == (200, 1)
        assert [g.shape for g in groups.individual] == [(200, 1), (200, 2)]
        np.testing.assert_array_equal(groups.concatenate(), result.scores.mean)
