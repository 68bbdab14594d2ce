import math

import numpy as np
import pytest

from rifl.core import (
    bonferroni_threshold,
    build_voting_matrix,
    default_rho_grid,
    ivw_aggregate,
    local_dissimilarity,
    local_table,
    merge_intervals,
    min_resample_discrepancy,
    naive_ci,
    naive_region,
    oracle_ci,
    required_size,
    resample_dissimilarities,
    resampled_statistics,
    rifl_confidence_region,
    sampling_accuracy,
    select_rho,
    test_statistic,
)
from rifl.errors import (
    DimensionMismatchError,
    EmptySetError,
    MajorityRuleUnverifiableError,
)
from rifl.stats_kernel import RandomStream, normal_quantile
from rifl.structs import (
    DissimilarityTable,
    SiteSummary,
    TuningConfig,
    pair_indices,
)


def _univariate(points, sigmas, n=100):
    return [
        SiteSummary(site_id=i + 1, beta_hat=np.array([b]), n=n, sigma_hat=s)
        for i, (b, s) in enumerate(zip(points, sigmas, strict=True))
    ]



@pytest.mark.parametrize(
    ("n_sites", "fraction", "expected"),
    [(10, 0.5, 6), (10, 0.8, 8), (5, 0.5, 3), (4, 0.5, 3), (16, 0.5, 9), (6, 0.5, 4)],
)
def test_required_size(n_sites, fraction, expected):
    assert required_size(n_sites, fraction) == expected


def test_local_dissimilarity_univariate():
    l_hat, se_l = local_dissimilarity(_univariate([1.0, 1.0], [1.0, 1.0]))
    assert l_hat[0] == 0.0
    assert se_l[0] == pytest.approx(math.sqrt(2))
    l_hat, se_l = local_dissimilarity(_univariate([2.0, -1.0], [0.3, 0.4]))
    assert l_hat[0] == pytest.approx(3.0)
    assert se_l[0] == pytest.approx(0.5)


def test_local_dissimilarity_multivariate():
    summaries = [
        SiteSummary(1, np.array([1.0, 0.0]), 100, omega_hat=np.eye(2) / 100),
        SiteSummary(2, np.array([0.0, 0.0]), 100, omega_hat=np.eye(2) / 100),
    ]
    l_hat, se_l = local_dissimilarity(summaries)
    assert l_hat[0] == pytest.approx(1.0)
    assert se_l[0] == pytest.approx(0.3)


def test_local_dissimilarity_inconsistent_dimension():
    summaries = [
        SiteSummary(1, np.array([1.0, 0.0]), 100, omega_hat=np.eye(2)),
        SiteSummary(2, np.array([0.0]), 100, sigma_hat=1.0),
    ]
    with pytest.raises(DimensionMismatchError):
        local_dissimilarity(summaries)


def test_statistic_takes_the_larger_ratio():
    assert test_statistic(0.0, 1.0, 0.0, 1.0) == 0.0
    assert test_statistic(2.0, 1.0, -3.0, 1.0) == 3.0
    assert test_statistic(None, None, -3.0, 2.0) == 1.5


def test_voting_matrix():
    n = 4
    pairs = len(pair_indices(n)[0])
    h = build_voting_matrix(np.zeros(pairs), n, 3.45)
    assert h.h.all()
    statistics = np.zeros(pairs)
    statistics[0] = 10.0
    h = build_voting_matrix(statistics, n, 3.45)
    assert not h.h[0, 1]
    assert not h.h[1, 0]
    assert h.h.sum() == n * n - 2
    assert np.array_equal(h.h, h.h.T)
    assert np.all(np.diag(h.h))


def test_voting_matrix_needs_positive_threshold():
    with pytest.raises(ValueError, match="positive"):
        build_voting_matrix(np.zeros(3), 3, 0.0)


def test_ivw_aggregate():
    summaries = _univariate([0.0, 2.0], [1.0, 1 / math.sqrt(3)])
    point, se = ivw_aggregate(summaries, [0, 1])
    assert point == pytest.approx(1.5)
    assert se == pytest.approx(0.5)
    point, se = ivw_aggregate(_univariate([1.0, 2.0, 3.0], [2.0] * 3), [0, 1, 2])
    assert point == pytest.approx(2.0)
    assert se == pytest.approx(2 / math.sqrt(3))
    assert ivw_aggregate(summaries, [1]) == pytest.approx((2.0, 1 / math.sqrt(3)))
    with pytest.raises(EmptySetError):
        ivw_aggregate(summaries, [])


def test_ivw_multivariate():
    summaries = [
        SiteSummary(1, np.array([1.0, 0.0]), 100, omega_hat=np.eye(2)),
        SiteSummary(2, np.array([0.0, 1.0]), 100, omega_hat=np.eye(2)),
    ]
    center, precision = ivw_aggregate(summaries, [0, 1])
    assert np.allclose(center, [0.5, 0.5])
    assert np.allclose(precision, 2 * np.eye(2))
    region = naive_region(summaries, [0, 1], 0.05)
    assert region.contains(center)
    assert not region.contains(center + 5)


def test_naive_and_oracle_ci():
    lo, hi = naive_ci(_univariate([0.0], [1.0]), [0], 0.05)
    assert lo == pytest.approx(-1.959964, abs=1e-6)
    assert hi == pytest.approx(1.959964, abs=1e-6)
    summaries = _univariate([1.0] * 6 + [5.0] * 4, [0.3] * 10)
    lo, hi = oracle_ci(summaries, range(6), 0.05)
    half = normal_quantile(0.025) * 0.3 / math.sqrt(6)
    assert (lo, hi) == pytest.approx((1.0 - half, 1.0 + half))


def test_resample_degenerate_se():
    table = DissimilarityTable(
        n_sites=3,
        l_hat=np.array([0.5, -1.0, 2.0]),
        se_l=np.full(3, 1e-12),
        d_hat=np.array([1.0, 2.0, 3.0]),
        se_d=np.full(3, 1e-12),
    )
    for draw in resample_dissimilarities(table, 5, RandomStream(0)):
        assert np.allclose(draw.l_draw, table.l_hat, atol=1e-9)
        assert np.allclose(draw.d_draw, table.d_hat, atol=1e-9)


def test_resample_moments():
    table = DissimilarityTable(n_sites=2, l_hat=np.array([1.0]), se_l=np.array([0.5]))
    m = 20_000
    draws = np.array(
        [d.l_draw[0] for d in resample_dissimilarities(table, m, RandomStream(4))],
    )
    assert abs(draws.mean() - 1.0) < 4 * 0.5 / math.sqrt(m)
    assert draws.var() == pytest.approx(0.25, rel=0.05)


def test_resample_draws_are_independent_of_count():
    table = DissimilarityTable(n_sites=3, l_hat=np.zeros(3), se_l=np.ones(3))
    short = resample_dissimilarities(table, 3, RandomStream(8))
    long = resample_dissimilarities(table, 10, RandomStream(8))
    for a, b in zip(short, long, strict=False):
        assert np.array_equal(a.l_draw, b.l_draw)


def test_sampling_accuracy():
    nu = 0.0025
    z = normal_quantile(nu / 4)
    expected = math.sqrt(math.pi) * math.exp(z**2 / 2)
    assert sampling_accuracy(1, nu, 2, math.e) == pytest.approx(expected, rel=1e-10)
    ratio = sampling_accuracy(1000, nu, 10, 1000) / sampling_accuracy(500, nu, 10, 1000)
    assert ratio == pytest.approx(2 ** (-1 / 90), rel=1e-12)
    values = [sampling_accuracy(m, nu, 4, 100) for m in (10, 100, 1000, 10_000)]
    assert all(b < a for a, b in zip(values, values[1:], strict=False))


@pytest.mark.parametrize(("resamples", "n_sites", "nu", "n"), [(1, 1, 0.01, 10), (1, 3, 0.6, 10)])
def test_sampling_accuracy_domain(resamples, n_sites, nu, n):
    with pytest.raises(ValueError):
        sampling_accuracy(resamples, nu, n_sites, n)


def test_default_rho_grid():
    grid = default_rho_grid(500, 10, 1000)
    assert len(grid) == 40
    assert grid[-1] == pytest.approx(1.0)
    assert grid[0] == pytest.approx((1 / 12) * (math.log(1000) / 500) ** (1 / 90))
    assert all(b > a for a, b in zip(grid, grid[1:], strict=False))


def test_select_rho_zero_draws():
    n_sites = 5
    statistics = np.zeros((20, 10))
    grid = default_rho_grid(20, n_sites, 100)
    selection = select_rho(statistics, 3.0, n_sites, 0.1, grid)
    assert selection.rule_met
    assert selection.rho == grid[0]
    assert selection.retained_count == 20


def test_select_rho_split_sites():
    n_sites = 10
    summaries = _univariate([0.0] * 5 + [100.0] * 5, [0.1] * 10)
    table = local_table(summaries)
    draws = resample_dissimilarities(table, 50, RandomStream(1))
    statistics = resampled_statistics(draws, table)
    threshold = bonferroni_threshold(n_sites, 0.0025)
    selection = select_rho(statistics, threshold, n_sites, 0.1, default_rho_grid(50, 10, 100))
    assert not selection.rule_met
    assert selection.rho == 1.0
    assert selection.retained_count == 0


def test_region_identical_sites():
    summaries = _univariate([1.0] * 5, [0.1] * 5)
    table = local_table(summaries)
    config = TuningConfig(resamples=200, rho=1.0)
    region = rifl_confidence_region(summaries, table, config, RandomStream(3))
    assert len(region.intervals) == 1
    assert region.intervals[0] == pytest.approx(naive_ci(summaries, range(5), config.alpha1))
    assert region.midpoint == pytest.approx(1.0)
    assert np.allclose(region.generalizability, 1.0)
    assert region.retained_count == 200
    assert region.contains(1.0)
    assert not region.contains(2.0)


def test_region_prevailing_majority():
    points = [0.0, 0.01, -0.02, 0.015, 0.0, -0.01, 3.0, 3.5, -4.0, 5.0]
    summaries = _univariate(points, [0.05] * 10)
    table = local_table(summaries)
    region = rifl_confidence_region(
        summaries,
        table,
        TuningConfig(resamples=300),
        RandomStream(12),
    )
    assert region.contains(0.0)
    assert not region.contains(3.0)
    assert np.all(region.generalizability[:6] > 0.9)
    assert np.all(region.generalizability[6:] < 0.1)
    assert 0.0 <= region.generalizability.min() <= region.generalizability.max() <= 1.0
    lo, hi = region.hull
    assert lo <= region.midpoint <= hi
    for index_set in region.retained_sets:
        seg = naive_ci(summaries, index_set, 0.05 - 0.05 / 20)
        assert any(a <= seg[0] and seg[1] <= b for a, b in region.intervals)


def test_region_is_reproducible():
    summaries = _univariate([0.0, 0.1, -0.1, 0.05, 2.0], [0.1] * 5)
    table = local_table(summaries)
    config = TuningConfig(resamples=100)
    a = rifl_confidence_region(summaries, table, config, RandomStream(5))
    b = rifl_confidence_region(summaries, table, config, RandomStream(5))
    assert a.intervals == b.intervals
    assert a.rho == b.rho


def test_larger_rho_retains_more():
    summaries = _univariate([0.0, 0.3, -0.3, 0.2, 0.6, 1.0, -0.8], [0.2] * 7)
    table = local_table(summaries)
    counts = []
    for rho in (0.3, 0.6, 1.0):
        try:
            region = rifl_confidence_region(
                summaries,
                table,
                TuningConfig(resamples=200, rho=rho),
                RandomStream(2),
            )
            counts.append(region.retained_count)
        except MajorityRuleUnverifiableError:
            counts.append(0)
    assert counts == sorted(counts)
    assert counts[-1] > 0


def test_region_unverifiable_majority():
    summaries = _univariate([0.0] * 5 + [100.0] * 5, [0.1] * 10)
    table = local_table(summaries)
    with pytest.raises(MajorityRuleUnverifiableError) as info:
        rifl_confidence_region(summaries, table, TuningConfig(resamples=50), RandomStream(0))
    assert info.value.diagnostics["required_size"] == 6


def test_region_multivariate():
    rng = RandomStream(6).generator()
    summaries = [
        SiteSummary(
            site_id=i + 1,
            beta_hat=np.array([1.0, -1.0]) + rng.normal(scale=0.001, size=2),
            n=1000,
            omega_hat=np.eye(2) * 1e-4,
        )
        for i in range(5)
    ]
    table = local_table(summaries)
    region = rifl_confidence_region(summaries, table, TuningConfig(resamples=100), RandomStream(1))
    assert region.is_multivariate
    assert region.contains(np.array([1.0, -1.0]))
    assert not region.contains(np.array([2.0, 0.0]))
    with pytest.raises(ValueError):
        region.total_length  # noqa: B018


def test_region_needs_three_sites():
    summaries = _univariate([0.0, 0.0], [1.0, 1.0])
    with pytest.raises(ValueError, match="three"):
        rifl_confidence_region(summaries, local_table(summaries), TuningConfig(), RandomStream(0))


def test_merge_intervals():
    assert merge_intervals([(3, 4), (0, 1), (0.5, 2)]) == [(0.0, 2.0), (3.0, 4.0)]
    assert merge_intervals([(0, 1), (1, 2)]) == [(0.0, 2.0)]


def test_min_resample_discrepancy():
    table = DissimilarityTable(n_sites=3, l_hat=np.zeros(3), se_l=np.ones(3))
    draws = resample_dissimilarities(table, 100, RandomStream(0))
    gap = min_resample_discrepancy(draws, table, np.zeros(3))
    expected = min(np.max(np.abs(d.l_draw)) for d in draws)
    assert gap == pytest.approx(expected)
