"""
The RIFL engine: similarity tests between sites, voting matrices, prevailing
set estimators, resampling with a shrunken threshold, and the union
confidence region with per-site generalizability scores.

Sites are addressed by 0-based position in the summaries list throughout this
module; `SiteSummary.site_id` is only used for display.
"""

import logging
import math
from collections import Counter
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from rifl.clique import maximum_clique
from rifl.errors import EmptySetError, MajorityRuleUnverifiableError
from rifl.stats_kernel import (
    RandomStream,
    chisq_quantile,
    normal_quantile,
    psd_inverse,
)
from rifl.structs import (
    ConfidenceRegion,
    DissimilarityTable,
    Ellipsoid,
    ResampleDraw,
    SiteSummary,
    TuningConfig,
    VotingMatrix,
    check_consistent,
    pair_indices,
)

RHO_FLOOR_CONSTANT = 1 / 12
RHO_GRID_SIZE = 40
SELECTION_LEVEL = 0.05


def required_size(n_sites: int, fraction: float = 0.5) -> int:
    """Smallest set size satisfying the majority rule. Never weaker than a
    strict majority, and at least fraction * L when fraction exceeds 1/2."""
    strict_majority = n_sites // 2 + 1
    return max(strict_majority, math.ceil(fraction * n_sites - 1e-9))


def bonferroni_threshold(n_sites: int, level: float) -> float:
    """z_{level / [2L(L-1)]}"""
    return normal_quantile(level / (2 * n_sites * (n_sites - 1)))


def local_dissimilarity(
    summaries: Sequence[SiteSummary],
) -> tuple[np.ndarray, np.ndarray]:
    q = check_consistent(summaries)
    if len(summaries) < 2:
        msg = "Dissimilarities need at least two sites"
        raise ValueError(msg)
    rows, cols = pair_indices(len(summaries))
    l_hat = np.empty(rows.shape[0])
    se_l = np.empty(rows.shape[0])
    for i, (l, k) in enumerate(zip(rows, cols, strict=True)):
        a, b = summaries[l], summaries[k]
        if q == 1:
            l_hat[i] = a.point - b.point
            se_l[i] = math.sqrt(a.sigma_hat**2 + b.sigma_hat**2)
        else:
            diff = a.beta_hat - b.beta_hat
            l_hat[i] = float(diff @ diff)
            se_l[i] = math.sqrt(
                4 * diff @ (a.omega_hat + b.omega_hat) @ diff + 1 / min(a.n, b.n),
            )
    return l_hat, se_l


def local_table(summaries: Sequence[SiteSummary]) -> DissimilarityTable:
    """Dissimilarity table with only the local part, for settings without a
    shared nuisance model."""
    l_hat, se_l = local_dissimilarity(summaries)
    return DissimilarityTable(n_sites=len(summaries), l_hat=l_hat, se_l=se_l)


def test_statistic(d_entry, se_d, l_entry, se_l):
    """max(|D/SE_D|, |L/SE_L|), or |L/SE_L| when the global part is None.
    Works elementwise on arrays."""
    local = np.abs(np.asarray(l_entry, dtype=float) / se_l)
    if d_entry is None:
        return local
    return np.maximum(np.abs(np.asarray(d_entry, dtype=float) / se_d), local)


test_statistic.__test__ = False  # not a pytest test despite the name


def build_voting_matrix(statistics: np.ndarray, n_sites: int, threshold: float):
    if not threshold > 0:
        msg = f"Threshold must be positive, got {threshold}"
        raise ValueError(msg)
    statistics = np.asarray(statistics, dtype=float).reshape(-1)
    rows, cols = pair_indices(n_sites)
    if statistics.shape[0] != rows.shape[0]:
        msg = f"Expected {rows.shape[0]} pair statistics, got {statistics.shape[0]}"
        raise ValueError(msg)
    h = np.eye(n_sites, dtype=bool)
    similar = statistics <= threshold
    h[rows, cols] = similar
    h[cols, rows] = similar
    return VotingMatrix(h)


def majority_vote_set(h: VotingMatrix, majority_fraction: float = 0.5):
    """Sites whose row (diagonal included) meets the majority rule."""
    need = required_size(h.n_sites, majority_fraction)
    return tuple(int(l) for l in np.flatnonzero(h.votes() >= need))


def ivw_aggregate(summaries: Sequence[SiteSummary], index_set: Sequence[int]):
    """
    Inverse-variance weighted combination of the selected sites.

    Returns (point, se) for univariate summaries, and (center, precision) for
    multivariate ones.
    """
    if len(index_set) == 0:
        msg = "Cannot aggregate an empty set of sites"
        raise EmptySetError(msg)
    chosen = [summaries[l] for l in index_set]
    q = check_consistent(chosen)
    if q == 1:
        weights = np.array([1 / s.sigma_hat**2 for s in chosen])
        points = np.array([s.point for s in chosen])
        total = float(np.sum(weights))
        return float(np.sum(weights * points) / total), 1 / math.sqrt(total)
    precision = np.zeros((q, q))
    weighted = np.zeros(q)
    for s in chosen:
        site_precision = psd_inverse(s.omega_hat)
        precision += site_precision
        weighted += site_precision @ s.beta_hat
    center = np.linalg.solve(precision, weighted)
    return center, precision


def naive_ci(
    summaries: Sequence[SiteSummary],
    index_set: Sequence[int],
    alpha: float,
) -> tuple[float, float]:
    point, se = ivw_aggregate(summaries, index_set)
    if not np.isscalar(point):
        msg = "naive_ci is univariate, use naive_region for vector targets"
        raise ValueError(msg)
    half = normal_quantile(alpha / 2) * se
    return point - half, point + half


def naive_region(
    summaries: Sequence[SiteSummary],
    index_set: Sequence[int],
    alpha: float,
) -> Ellipsoid:
    center, precision = ivw_aggregate(summaries, index_set)
    q = summaries[0].q
    return Ellipsoid(center, precision, chisq_quantile(alpha, q))


def oracle_ci(summaries, true_set, alpha):
    return naive_ci(summaries, true_set, alpha)


def resample_dissimilarities(
    table: DissimilarityTable,
    resamples: int,
    stream: RandomStream,
) -> list[ResampleDraw]:
    """Draw m uses its own substream, so any subset of draws can be
    regenerated independently of the others."""
    if resamples < 1:
        msg = f"Need at least one resample, got {resamples}"
        raise ValueError(msg)
    draws = []
    for m in range(resamples):
        gen = stream.substream(m).generator()
        l_draw = gen.normal(table.l_hat, table.se_l)
        d_draw = gen.normal(table.d_hat, table.se_d) if table.has_global else None
        draws.append(ResampleDraw(index=m, l_draw=l_draw, d_draw=d_draw))
    return draws


def resampled_statistics(
    draws: Sequence[ResampleDraw],
    table: DissimilarityTable,
) -> np.ndarray:
    """Statistics of each draw over the ORIGINAL standard errors, shape (M, pairs)."""
    return np.stack(
        [test_statistic(d.d_draw, table.se_d, d.l_draw, table.se_l) for d in draws],
    )


def sampling_accuracy(resamples: int, nu: float, n_sites: int, n: float) -> float:
    if n_sites < 2:
        msg = f"Need at least two sites, got {n_sites}"
        raise ValueError(msg)
    if not 0 < nu < 0.5:
        msg = f"nu must lie in (0, 1/2), got {nu}"
        raise ValueError(msg)
    if n < 2:
        msg = f"Sample size must be at least 2, got {n}"
        raise ValueError(msg)
    if resamples < 1:
        msg = f"Need at least one resample, got {resamples}"
        raise ValueError(msg)
    pairs = n_sites * (n_sites - 1)
    z = bonferroni_threshold(n_sites, nu)
    c_star = 2 ** (1 / pairs - 0.5) * math.sqrt(math.pi) * math.exp(z**2 / 2)
    return c_star * (math.log(n) / resamples) ** (1 / pairs)


def default_rho_grid(
    resamples: int,
    n_sites: int,
    n: float,
    size: int = RHO_GRID_SIZE,
) -> tuple[float, ...]:
    floor = RHO_FLOOR_CONSTANT * (math.log(n) / resamples) ** (
        1 / (n_sites * (n_sites - 1))
    )
    floor = min(floor, 1.0)
    return tuple(float(r) for r in np.geomspace(floor, 1.0, size))


@dataclass(frozen=True)
class RhoSelection:
    rho: float
    rule_met: bool
    retained_count: int


def _critical_grid_index(
    statistics: np.ndarray,
    n_sites: int,
    thresholds: Sequence[float],
    need: int,
) -> int:
    """Smallest grid index whose voting matrix has a clique of at least `need`
    sites, or len(thresholds) if none does. Clique size is monotone in the
    threshold so a binary search suffices."""
    lo, hi = 0, len(thresholds)
    while lo < hi:
        mid = (lo + hi) // 2
        h = build_voting_matrix(statistics, n_sites, thresholds[mid])
        if len(maximum_clique(h)) >= need:
            hi = mid
        else:
            lo = mid + 1
    return lo


def _critical_indices(statistics, n_sites, thresholds, need) -> np.ndarray:
    return np.array(
        [_critical_grid_index(s, n_sites, thresholds, need) for s in statistics],
    )


def select_rho(
    statistics: np.ndarray,
    threshold: float,
    n_sites: int,
    prop: float,
    rho_grid: Sequence[float],
    majority_fraction: float = 0.5,
) -> RhoSelection:
    """
    Smallest rho on the grid for which at least prop * M resampled voting
    matrices (thresholded at rho * threshold) have a maximum clique meeting the
    majority rule. Falls back to rho = 1 with rule_met=False.

    `statistics` is the (M, pairs) array from `resampled_statistics`.
    """
    if len(statistics) == 0:
        msg = "select_rho needs at least one draw"
        raise ValueError(msg)
    if not threshold > 0:
        msg = f"Threshold must be positive, got {threshold}"
        raise ValueError(msg)
    grid = [r for r in rho_grid if r <= 1.0]
    need = required_size(n_sites, majority_fraction)
    critical = _critical_indices(
        statistics,
        n_sites,
        [r * threshold for r in grid],
        need,
    )
    target = prop * len(statistics)
    for i, rho in enumerate(grid):
        retained = int(np.sum(critical <= i))
        if retained >= target:
            return RhoSelection(rho=rho, rule_met=True, retained_count=retained)
    retained = _retained_at(statistics, n_sites, threshold, need)
    return RhoSelection(rho=1.0, rule_met=False, retained_count=retained)


def _retained_at(statistics, n_sites, threshold, need) -> int:
    return sum(
        len(maximum_clique(build_voting_matrix(s, n_sites, threshold))) >= need
        for s in statistics
    )


def merge_intervals(intervals) -> list[tuple[float, float]]:
    merged: list[list[float]] = []
    for lo, hi in sorted(intervals):
        if merged and lo <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], hi)
        else:
            merged.append([lo, hi])
    return [(float(lo), float(hi)) for lo, hi in merged]


def min_resample_discrepancy(
    draws: Sequence[ResampleDraw],
    table: DissimilarityTable,
    true_l: np.ndarray,
    true_d: np.ndarray | None = None,
) -> float:
    """min over draws of the largest standardized distance between a resampled
    dissimilarity and its true value."""
    best = math.inf
    for draw in draws:
        gap = np.max(np.abs(draw.l_draw - true_l) / table.se_l)
        if draw.d_draw is not None and true_d is not None:
            gap = max(gap, np.max(np.abs(draw.d_draw - true_d) / table.se_d))
        best = min(best, float(gap))
    return best


def rifl_confidence_region(
    summaries: Sequence[SiteSummary],
    table: DissimilarityTable,
    config: TuningConfig,
    stream: RandomStream,
) -> ConfidenceRegion:
    n_sites = len(summaries)
    if n_sites < 3:
        msg = f"RIFL needs at least three sites, got {n_sites}"
        raise ValueError(msg)
    if table.n_sites != n_sites:
        msg = f"Table covers {table.n_sites} sites but {n_sites} summaries were given"
        raise ValueError(msg)
    check_consistent(summaries)
    multivariate = summaries[0].is_multivariate
    need = required_size(n_sites, config.majority_fraction)
    base_threshold = bonferroni_threshold(n_sites, config.nu)

    draws = resample_dissimilarities(table, config.resamples, stream)
    statistics = resampled_statistics(draws, table)

    if config.rho is not None:
        selection = RhoSelection(rho=config.rho, rule_met=True, retained_count=-1)
    else:
        grid = config.rho_grid or default_rho_grid(
            config.resamples,
            n_sites,
            min(s.n for s in summaries),
        )
        selection = select_rho(
            statistics,
            base_threshold,
            n_sites,
            config.prop,
            grid,
            config.majority_fraction,
        )
        if not selection.rule_met:
            logging.warning(
                f"No rho on the grid retained {100 * config.prop:.0f}% of resamples, "
                "falling back to rho=1",
            )
    threshold = selection.rho * base_threshold

    retained_sets: Counter = Counter()
    clique_sizes: Counter = Counter()
    for row in statistics:
        h = build_voting_matrix(row, n_sites, threshold)
        size = len(maximum_clique(h))
        clique_sizes[size] += 1
        if size >= need:
            retained_sets[majority_vote_set(h, config.majority_fraction)] += 1
    retained_count = sum(retained_sets.values())
    if retained_count == 0:
        diagnostics = {
            "rho": selection.rho,
            "threshold": threshold,
            "required_size": need,
            "clique_size_counts": dict(sorted(clique_sizes.items())),
            "resamples": config.resamples,
        }
        msg = (
            "No resample produced a maximum clique satisfying the majority rule; "
            "the sites may not share a prevailing model"
        )
        raise MajorityRuleUnverifiableError(msg, diagnostics)

    generalizability = np.zeros(n_sites)
    for index_set, count in retained_sets.items():
        generalizability[list(index_set)] += count
    generalizability /= retained_count

    ordered_sets = dict(sorted(retained_sets.items()))
    if multivariate:
        ellipsoids = [
            naive_region(summaries, index_set, config.alpha1)
            for index_set in ordered_sets
        ]
        return ConfidenceRegion(
            intervals=None,
            ellipsoids=ellipsoids,
            retained_count=retained_count,
            generalizability=generalizability,
            midpoint=None,
            rho=selection.rho,
            rule_met=selection.rule_met,
            resamples=config.resamples,
            retained_sets=ordered_sets,
        )
    intervals = merge_intervals(
        naive_ci(summaries, index_set, config.alpha1) for index_set in ordered_sets
    )
    midpoint = (intervals[0][0] + intervals[-1][1]) / 2
    logging.debug(
        f"RIFL region: rho={selection.rho:.4f}, |M|={retained_count}, "
        f"{len(intervals)} segment(s)",
    )
    return ConfidenceRegion(
        intervals=intervals,
        ellipsoids=None,
        retained_count=retained_count,
        generalizability=generalizability,
        midpoint=midpoint,
        rho=selection.rho,
        rule_met=selection.rule_met,
        resamples=config.resamples,
        retained_sets=ordered_sets,
    )
