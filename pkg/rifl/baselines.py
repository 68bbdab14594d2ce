"""Comparator intervals: median, m-out-of-n bootstrap, maximum-clique voting,
majority voting and the oracle bias-aware interval."""

import logging
import math
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from rifl.clique import maximum_clique
from rifl.core import (
    SELECTION_LEVEL,
    bonferroni_threshold,
    build_voting_matrix,
    ivw_aggregate,
    majority_vote_set,
    naive_ci,
    test_statistic,
)
from rifl.errors import NumericError
from rifl.stats_kernel import RandomStream, chisq_quantile, normal_quantile
from rifl.structs import DissimilarityTable, SiteSummary, VotingMatrix
from rifl.utils import StrEnum


class BaselineMethod(StrEnum):
    RIFL = "rifl"
    RIFL_FRACTION = "rifl_fraction"
    VMC = "vmc"
    MV = "mv"
    MEDIAN = "median"
    MNB = "mnb"
    OBA = "oba"
    ORACLE = "oracle"


@dataclass(frozen=True)
class BaselineResult:
    method: BaselineMethod
    interval: tuple[float, float]
    point: float
    se: float | None = None
    selected: tuple[int, ...] | None = None
    """0-based sites the interval aggregates over, for the selection based methods."""

    def __post_init__(self):
        lo, hi = (float(v) for v in self.interval)
        if not lo <= hi:
            msg = f"{self.method} interval has lo={lo} > hi={hi}"
            raise ValueError(msg)
        object.__setattr__(self, "interval", (lo, hi))
        object.__setattr__(self, "method", BaselineMethod(self.method))

    @property
    def length(self) -> float:
        return self.interval[1] - self.interval[0]

    def contains(self, value: float) -> bool:
        return self.interval[0] <= value <= self.interval[1]


def _univariate(summaries: Sequence[SiteSummary]) -> tuple[np.ndarray, np.ndarray]:
    if any(s.is_multivariate for s in summaries):
        msg = "Comparator intervals are only defined for univariate targets"
        raise ValueError(msg)
    return (
        np.array([s.point for s in summaries]),
        np.array([s.sigma_hat for s in summaries]),
    )


def median_ci(
    summaries: Sequence[SiteSummary],
    alpha: float,
    resamples: int,
    stream: RandomStream,
) -> BaselineResult:
    """Median of the site estimates with a parametric bootstrap standard error."""
    if len(summaries) < 3:
        msg = f"The median interval needs at least three sites, got {len(summaries)}"
        raise ValueError(msg)
    if resamples < 100:
        msg = f"Need at least 100 bootstrap draws, got {resamples}"
        raise ValueError(msg)
    points, ses = _univariate(summaries)
    point = float(np.median(points))
    draws = stream.generator().normal(points, ses, size=(resamples, points.shape[0]))
    se = float(np.std(np.median(draws, axis=1), ddof=1))
    half = normal_quantile(alpha / 2) * se
    return BaselineResult(
        BaselineMethod.MEDIAN,
        (point - half, point + half),
        point,
        se=se,
    )


def selection_matrix(
    summaries: Sequence[SiteSummary],
    table: DissimilarityTable,
) -> VotingMatrix:
    """Voting matrix of the observed statistics at the fixed selection level."""
    statistics = test_statistic(table.d_hat, table.se_d, table.l_hat, table.se_l)
    threshold = bonferroni_threshold(len(summaries), SELECTION_LEVEL)
    return build_voting_matrix(statistics, len(summaries), threshold)


def vmc_point(summaries: Sequence[SiteSummary], table: DissimilarityTable):
    """(point, se, selected sites) of the maximum clique estimator."""
    selected = maximum_clique(selection_matrix(summaries, table))
    point, se = ivw_aggregate(summaries, selected)
    return point, se, selected


def vmc_ci(
    summaries: Sequence[SiteSummary],
    table: DissimilarityTable,
    alpha: float,
) -> BaselineResult:
    point, se, selected = vmc_point(summaries, table)
    return BaselineResult(
        BaselineMethod.VMC,
        naive_ci(summaries, selected, alpha),
        point,
        se=se,
        selected=selected,
    )


def mv_ci(
    summaries: Sequence[SiteSummary],
    table: DissimilarityTable,
    alpha: float,
    majority_fraction: float = 0.5,
) -> BaselineResult:
    """Naive interval over the sites that win a majority of the votes. Falls
    back to the maximum clique when no site does."""
    h = selection_matrix(summaries, table)
    selected = majority_vote_set(h, majority_fraction)
    if not selected:
        logging.info("No site reached a majority of votes, using the maximum clique")
        selected = maximum_clique(h)
    point, se = ivw_aggregate(summaries, selected)
    return BaselineResult(
        BaselineMethod.MV,
        naive_ci(summaries, selected, alpha),
        point,
        se=se,
        selected=selected,
    )


def subsample_sizes(site_sizes: Sequence[int], upsilon: float) -> list[int]:
    if not 0 < upsilon <= 1:
        msg = f"upsilon must lie in (0, 1], got {upsilon}"
        raise ValueError(msg)
    return [max(1, math.floor(n**upsilon + 1e-9)) for n in site_sizes]


def _smallest_quantile(sorted_roots: np.ndarray, p: float) -> float:
    """Smallest t with (1/B) #{roots <= t} >= p."""
    b = sorted_roots.shape[0]
    k = max(1, math.ceil(p * b - 1e-9))
    return float(sorted_roots[k - 1])


def mnb_ci(
    point: float,
    site_sizes: Sequence[int],
    estimate: Callable[[list[np.ndarray]], float],
    alpha: float,
    stream: RandomStream,
    upsilon: float = 0.8,
    resamples: int = 500,
    workers: int = 1,
) -> BaselineResult:
    """
    m-out-of-n bootstrap interval around the maximum clique estimate `point`.

    `estimate` receives, for every site, the row indices of a with-replacement
    subsample of size floor(n_l ** upsilon) and returns the maximum clique
    estimate on those subsamples. Replicate b draws from `stream.substream(b)`.
    Roots are scaled with the smallest site's m and n.
    """
    sizes = subsample_sizes(site_sizes, upsilon)

    def replicate(b: int) -> float | None:
        gen = stream.substream(b).generator()
        indices = [gen.integers(0, n, size=m) for n, m in zip(site_sizes, sizes, strict=True)]
        try:
            return float(estimate(indices))
        except (NumericError, ValueError) as e:
            logging.debug(f"Bootstrap replicate {b} failed: {e}")
            return None

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            values = list(pool.map(replicate, range(resamples)))
    else:
        values = [replicate(b) for b in range(resamples)]
    kept = np.array([v for v in values if v is not None])
    if kept.shape[0] < max(2, resamples // 2):
        msg = f"Only {kept.shape[0]} of {resamples} bootstrap replicates succeeded"
        raise NumericError(msg)

    n_min = min(site_sizes)
    m_min = min(sizes)
    roots = np.sort(math.sqrt(m_min) * (kept - point))
    t_lo = _smallest_quantile(roots, alpha / 2)
    t_hi = _smallest_quantile(roots, 1 - alpha / 2)
    return BaselineResult(
        BaselineMethod.MNB,
        (point - t_hi / math.sqrt(n_min), point - t_lo / math.sqrt(n_min)),
        point,
    )


def oba_half_width(se_hat: float, oracle_bias: float, alpha: float) -> float:
    if not se_hat > 0:
        msg = f"Standard error must be positive, got {se_hat}"
        raise ValueError(msg)
    noncentrality = (oracle_bias / se_hat) ** 2
    return se_hat * math.sqrt(chisq_quantile(alpha, 1, noncentrality))


def oba_ci(
    point: float,
    se_hat: float,
    oracle_bias: float,
    alpha: float,
) -> BaselineResult:
    half = oba_half_width(se_hat, abs(oracle_bias), alpha)
    return BaselineResult(
        BaselineMethod.OBA,
        (point - half, point + half),
        point,
        se=se_hat,
    )


def ese_ratio(points: Sequence[float], ses: Sequence[float]) -> float:
    """Empirical SD of the estimates over their average reported SE."""
    points = np.asarray(points, dtype=float)
    if points.shape[0] < 2:
        msg = "Need at least two replications to rescale standard errors"
        raise ValueError(msg)
    return float(np.std(points, ddof=1) / np.mean(ses))
