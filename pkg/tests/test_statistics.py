"""Tests for the A12 effect size and the Mann-Whitney U test."""

import itertools

import numpy as np
import pytest
from scipy import stats

from app.core.exceptions import StatisticsError
from app.services.statistics_service import statistics_service


class TestA12:

    def test_ties_count_half(self) -> None:
        assert statistics_service.a12([1, 2, 3], [2, 3, 4]) == pytest.approx(2 / 9)

    def test_complement(self) -> None:
        x, y = [0.3, 0.5, 0.5, 0.9], [0.1, 0.5, 0.7]
        assert statistics_service.a12(x, y) + statistics_service.a12(y, x) == pytest.approx(1.0)

    def test_identical_samples(self) -> None:
        assert statistics_service.a12([0.4, 0.6], [0.4, 0.6]) == 0.5

    def test_dominance(self) -> None:
        assert statistics_service.a12([5, 6], [1, 2]) == 1.0

    def test_empty_sample(self) -> None:
        with pytest.raises(StatisticsError):
            statistics_service.a12([], [1.0])


class TestMannWhitney:

    def test_exact_small_sample(self) -> None:
        u, p = statistics_service.mann_whitney_u([1, 2, 3], [4, 5, 6])
        assert u == 0.0
        assert p == pytest.approx(0.1)

    def test_exact_matches_scipy_without_ties(self) -> None:
        x = [1.2, 3.4, 0.5, 2.2]
        y = [4.1, 2.9, 5.0, 3.3, 6.1]
        u, p = statistics_service.mann_whitney_u(x, y)
        expected = stats.mannwhitneyu(x, y, alternative="two-sided", method="exact")
        assert u == pytest.approx(expected.statistic)
        assert p == pytest.approx(expected.pvalue)

    def test_exact_with_ties(self) -> None:
        """All values tied: every arrangement is as extreme as the observed one."""
        _, p = statistics_service.mann_whitney_u([0.5, 0.5], [0.5, 0.5, 0.5])
        assert p == 1.0

    def test_normal_approximation_matches_scipy(self) -> None:
        rng = np.random.default_rng(3)
        x = np.round(rng.normal(0.6, 0.1, size=30), 2)
        y = np.round(rng.normal(0.5, 0.1, size=30), 2)
        u, p = statistics_service.mann_whitney_u(x, y)
        expected = stats.mannwhitneyu(x, y, alternative="two-sided", method="asymptotic", use_continuity=True)
        assert u == pytest.approx(expected.statistic)
        assert p == pytest.approx(expected.pvalue, rel=1e-9)

    def test_symmetric_p_value(self) -> None:
        x, y = [0.2, 0.4, 0.9], [0.3, 0.5, 0.6, 0.8]
        assert statistics_service.mann_whitney_u(x, y)[1] == pytest.approx(statistics_service.mann_whitney_u(y, x)[1])

    def test_compare(self) -> None:
        result = statistics_service.compare([0.9, 0.8, 1.0], [0.5, 0.6, 0.4])
        assert result.a12 == 1.0
        assert result.p_value == pytest.approx(0.1)
        assert (result.n_x, result.n_y) == (3, 3)
        assert result.mean_x == pytest.approx(0.9)
        assert result.mean_y == pytest.approx(0.5)


def _enumerated(x, y):
    """A12, U and the two-sided p-value by listing every split of the pooled values."""
    pooled = list(x) + list(y)
    nx, ny = len(x), len(y)

    def u_of(xs, ys):
        return sum(1.0 if a > b else 0.5 if a == b else 0.0 for a in xs for b in ys)

    observed = u_of(x, y)
    centre = nx * ny / 2.0
    total = extreme = 0
    for chosen in itertools.combinations(range(len(pooled)), nx):
        picked = set(chosen)
        xs = [pooled[i] for i in chosen]
        ys = [pooled[i] for i in range(len(pooled)) if i not in picked]
        total += 1
        if abs(u_of(xs, ys) - centre) >= abs(observed - centre):
            extreme += 1
    return observed / (nx * ny), observed, extreme / total


def test_small_samples_match_enumeration() -> None:
    rng = np.random.default_rng(11)
    for _ in range(150):
        x = [int(v) for v in rng.integers(0, 5, size=int(rng.integers(1, 7)))]
        y = [int(v) for v in rng.integers(0, 5, size=int(rng.integers(1, 7)))]
        a12, u, p = _enumerated(x, y)
        assert statistics_service.a12(x, y) == pytest.approx(a12, abs=1e-12)
        got_u, got_p = statistics_service.mann_whitney_u(x, y)
        assert got_u == u
        assert got_p == pytest.approx(p, abs=1e-12)
