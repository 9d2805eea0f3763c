"""Tests for subspace recovery metrics."""

from __future__ import annotations

import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from projive.core.errors import RankError, ShapeError
from projive.stats.metrics import (
    FittedComponents,
    RecoveryReport,
    chordal_norm,
    compare_components,
    principal_angles,
    recovery_rows,
    summarize_recovery,
)


class TestChordalNorm:
    """Tests for chordal_norm and principal_angles."""

    def test_forty_five_degrees(self) -> None:
        """Two lines at 45 degrees are sin(pi/4) apart."""
        assert chordal_norm([1.0, 0.0], [1.0, 1.0]) == pytest.approx(0.70710678, abs=1e-8)
        np.testing.assert_allclose(principal_angles([1.0, 0.0], [1.0, 1.0]), [math.pi / 4])

    def test_identical(self, rng: np.random.Generator) -> None:
        """A subspace is at distance 0 from itself."""
        f = rng.standard_normal((20, 3))

        assert chordal_norm(f, f) == pytest.approx(0.0, abs=1e-12)

    def test_orthogonal(self) -> None:
        """Orthogonal lines are at distance 1; orthogonal planes at sqrt(2) / 2."""
        assert chordal_norm([1.0, 0.0], [0.0, 1.0]) == pytest.approx(1.0)
        assert chordal_norm(np.eye(4)[:, :2], np.eye(4)[:, 2:]) == pytest.approx(math.sqrt(2.0) / 2.0)

    def test_column_space_only(self, rng: np.random.Generator) -> None:
        """Right-multiplying by an invertible matrix does not move the subspace."""
        f1 = rng.standard_normal((15, 2))
        f2 = rng.standard_normal((15, 2))
        mix = np.array([[2.0, 1.0], [0.5, -3.0]])

        assert chordal_norm(f1 @ mix, f2) == pytest.approx(chordal_norm(f1, f2), abs=1e-12)

    def test_unequal_ranks(self) -> None:
        """q is the smaller rank; a contained line is at distance 0."""
        assert chordal_norm(np.eye(3)[:, :2], [1.0, 1.0, 0.0]) == pytest.approx(0.0, abs=1e-12)

    def test_row_mismatch(self) -> None:
        """Subspaces of different ambient spaces are refused."""
        with pytest.raises(ShapeError):
            chordal_norm(np.ones((3, 1)), np.ones((4, 1)))

    def test_zero_matrix(self) -> None:
        """A zero matrix has no column space."""
        with pytest.raises(RankError):
            chordal_norm(np.zeros((3, 1)), np.ones((3, 1)))

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(min_value=0, max_value=2**32 - 1), r1=st.integers(1, 3), r2=st.integers(1, 3))
    def test_symmetric_and_bounded(self, seed: int, r1: int, r2: int) -> None:
        """The norm is symmetric and lies in [0, 1]."""
        rng = np.random.default_rng(seed)
        f1 = rng.standard_normal((8, r1))
        f2 = rng.standard_normal((8, r2))
        forward = chordal_norm(f1, f2)

        assert forward == pytest.approx(chordal_norm(f2, f1), abs=1e-12)
        assert 0.0 <= forward <= 1.0


def _components(rng: np.random.Generator, r_i: tuple[int, int]) -> FittedComponents:
    return FittedComponents(
        joint_scores=rng.standard_normal((10, 1)),
        indiv_scores=tuple(rng.standard_normal((10, r)) for r in r_i),
        joint_loadings=(rng.standard_normal((4, 1)), rng.standard_normal((5, 1))),
        indiv_loadings=tuple(rng.standard_normal((p, r)) for p, r in zip((4, 5), r_i, strict=True)),
    )


class TestCompareComponents:
    """Tests for component comparison and tables."""

    def test_self_comparison(self, rng: np.random.Generator) -> None:
        """A decomposition compared with itself is at distance 0 everywhere."""
        comps = _components(rng, (1, 2))
        report = compare_components(comps, comps)

        for value in report.as_dict().values():
            assert value == pytest.approx(0.0, abs=1e-12)

    def test_zero_rank_is_nan(self, rng: np.random.Generator) -> None:
        """A group without columns on either side gives NaN."""
        report = compare_components(_components(rng, (0, 2)), _components(rng, (1, 2)))

        assert math.isnan(report.indiv_score_dist[0])
        assert not math.isnan(report.indiv_score_dist[1])

    def test_block_mismatch(self, rng: np.random.Generator) -> None:
        """Block counts must agree."""
        comps = _components(rng, (1, 1))
        short = FittedComponents(
            joint_scores=comps.joint_scores,
            indiv_scores=comps.indiv_scores[:1],
            joint_loadings=comps.joint_loadings[:1],
            indiv_loadings=comps.indiv_loadings[:1],
        )
        with pytest.raises(ShapeError):
            compare_components(short, comps)

    def test_rows_and_summary(self) -> None:
        """Long rows carry labels; the summary formats mean (sd)."""
        reports = [
            RecoveryReport(0.1, (0.2, 0.3), (0.4, 0.5), (0.6, 0.7)),
            RecoveryReport(0.3, (0.2, 0.3), (0.4, 0.5), (0.6, 0.7)),
        ]
        rows = [
            row
            for i, report in enumerate(reports)
            for row in recovery_rows(report, {"scenario": "s", "method": "projive", "replicate": i})
        ]
        frame = pd.DataFrame(rows)

        assert len(frame) == 2 * 7
        assert set(frame["metric"]) >= {"joint_scores", "joint_loadings_2", "indiv_loadings_1"}

        table = summarize_recovery(frame)
        joint = table[table["metric"] == "joint_scores"].iloc[0]
        assert joint["mean"] == pytest.approx(0.2)
        assert joint["count"] == 2
        assert joint["summary"] == "0.20 (0.14)"

    def test_summary_ignores_missing_groups(self) -> None:
        """Grouping columns absent from the frame are skipped."""
        frame = pd.DataFrame({"metric": ["a", "a"], "value": [1.0, 3.0]})
        table = summarize_recovery(frame, by=("scenario",), digits=1)

        assert list(table["summary"]) == ["2.0 (1.4)"]
