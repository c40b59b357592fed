import logging
import math
from typing import Sequence, Tuple

import numpy as np
from scipy import stats

from ..core.exceptions import StatisticsError
from ..schemas.harness import ComparisonResult

logger = logging.getLogger(__name__)

# largest |x|*|y| for which the null distribution of U is enumerated exactly
EXACT_LIMIT = 400


class StatisticsService:

    def _check(self, x: Sequence[float], y: Sequence[float]) -> Tuple[np.ndarray, np.ndarray]:
        if len(x) == 0 or len(y) == 0:
            raise StatisticsError("both samples must be non-empty")
        return np.asarray(x, dtype=float), np.asarray(y, dtype=float)

    def a12(self, x: Sequence[float], y: Sequence[float]) -> float:
        """
        Vargha-Delaney effect size: probability that a value drawn from x beats
        one drawn from y, ties counting half
        """
        xs, ys = self._check(x, y)
        greater = np.sum(xs[:, None] > ys[None, :])
        equal = np.sum(xs[:, None] == ys[None, :])
        return float((greater + 0.5 * equal) / (xs.size * ys.size))

    def mann_whitney_u(self, x: Sequence[float], y: Sequence[float]) -> Tuple[float, float]:
        """
        U statistic of x and its two-sided p-value: exact null distribution over
        midranks for small samples, normal approximation with tie and continuity
        correction otherwise
        """
        xs, ys = self._check(x, y)
        nx, ny = xs.size, ys.size
        ranks = stats.rankdata(np.concatenate([xs, ys]))
        u = float(ranks[:nx].sum() - nx * (nx + 1) / 2.0)
        if nx * ny <= EXACT_LIMIT:
            return u, self._exact_p(ranks, nx)
        return u, self._normal_p(u, ranks, nx, ny)

    def _exact_p(self, ranks: np.ndarray, nx: int) -> float:
        # doubled midranks are integers
        doubled = np.rint(ranks * 2).astype(int)
        n = doubled.size
        total = int(doubled.sum())
        counts = np.zeros((nx + 1, total + 1))
        counts[0, 0] = 1.0
        for i, r in enumerate(doubled):
            for k in range(min(i + 1, nx), 0, -1):
                counts[k, r:] += counts[k - 1, : total + 1 - r]
        distribution = counts[nx]
        observed = int(doubled[:nx].sum())
        expected = nx * (n + 1)
        deviation = abs(observed - expected)
        sums = np.arange(total + 1)
        extreme = distribution[np.abs(sums - expected) >= deviation].sum()
        return float(min(1.0, extreme / distribution.sum()))

    def _normal_p(self, u: float, ranks: np.ndarray, nx: int, ny: int) -> float:
        n = nx + ny
        _, ties = np.unique(ranks, return_counts=True)
        tie_term = float(np.sum(ties ** 3 - ties)) / (n * (n - 1))
        variance = nx * ny / 12.0 * ((n + 1) - tie_term)
        if variance <= 0:
            return 1.0
        z = max(0.0, abs(u - nx * ny / 2.0) - 0.5) / math.sqrt(variance)
        return float(min(1.0, 2.0 * stats.norm.sf(z)))

    def compare(self, x: Sequence[float], y: Sequence[float]) -> ComparisonResult:
        u, p = self.mann_whitney_u(x, y)
        return ComparisonResult(
            a12=self.a12(x, y),
            u=u,
            p_value=p,
            n_x=len(x),
            n_y=len(y),
            mean_x=float(np.mean(x)),
            mean_y=float(np.mean(y)),
        )


statistics_service = StatisticsService()
