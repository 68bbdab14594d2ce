import math

import numpy as np
import pytest
import scipy.special

from rifl.causal import (
    BasisConfig,
    CausalSiteData,
    TargetSample,
    ate_site_summaries,
    dr_estimate,
    fit_ate_site,
    fit_nuisances,
    influence_values,
    outcome_contrast,
)
from rifl.errors import DimensionMismatchError
from rifl.stats_kernel import RandomStream


def _site(seed: int, n: int = 2000, shift: float = 0.0, effect: float = 2.0, noise: float = 1.0):
    gen = RandomStream(seed).generator()
    X = gen.normal(size=(n, 2)) + shift
    A = (gen.random(n) < scipy.special.expit(0.3 * X[:, 0] - 0.2 * X[:, 1])).astype(float)
    Y = 1.0 + X[:, 0] + A * (effect + 0.5 * X[:, 1]) + noise * gen.normal(size=n)
    return CausalSiteData(X, A, Y)


def _target(seed: int = 100, size: int = 5000):
    gen = RandomStream(seed).generator()
    return TargetSample(gen.normal(size=(size, 2)) + np.array([0.3, 0.0]))


def test_site_data_validation():
    X = np.zeros((4, 2))
    with pytest.raises(ValueError, match="0 or 1"):
        CausalSiteData(X, [0, 1, 2, 1], np.zeros(4))
    with pytest.raises(ValueError, match="arms"):
        CausalSiteData(X, np.ones(4), np.zeros(4))
    with pytest.raises(DimensionMismatchError):
        CausalSiteData(X, [0, 1, 0], np.zeros(4))


def test_basis_design():
    X = np.arange(6.0).reshape(3, 2)
    design = BasisConfig(propensity=(1,)).design(X, (1,))
    assert np.array_equal(design, [[1.0, 1.0], [1.0, 3.0], [1.0, 5.0]])
    assert BasisConfig().design(X, None).shape == (3, 3)


def test_density_ratio_balances_target():
    data = _site(1)
    target = _target()
    fits = fit_nuisances(data, target)
    w = np.column_stack([np.ones(data.n), data.X])
    omega = np.exp(w @ fits.eta_hat)
    assert omega.mean() == pytest.approx(1.0, abs=1e-8)
    balanced = (omega[:, None] * data.X).mean(axis=0)
    assert np.allclose(balanced, target.X_target.mean(axis=0), atol=1e-8)


def test_target_dimension_checked():
    with pytest.raises(DimensionMismatchError):
        fit_nuisances(_site(1), TargetSample(np.zeros((10, 3))))


def test_perfect_outcome_model_needs_no_correction():
    data = _site(2, noise=0.0)
    # outcome is linear in (1, x) within each arm
    target = _target()
    fits = fit_nuisances(data, target)
    estimate = dr_estimate(data, target, fits)
    assert estimate == pytest.approx(outcome_contrast(target, fits), abs=1e-8)
    truth = 2.0 + 0.5 * target.X_target[:, 1].mean()
    assert estimate == pytest.approx(truth, abs=1e-8)


def test_influence_mean_is_augmentation_mean():
    data = _site(3)
    target = _target()
    fits = fit_nuisances(data, target)
    tau = influence_values(data, target, fits)
    correction = dr_estimate(data, target, fits) - outcome_contrast(target, fits)
    assert tau.shape == (data.n,)
    assert tau.mean() == pytest.approx(correction, abs=1e-6)


def test_site_fit_summary():
    fit = fit_ate_site(_site(4), _target())
    summary = fit.summary(site_id=7)
    assert summary.site_id == 7
    assert summary.n == 2000
    assert summary.sigma_hat == pytest.approx(math.sqrt(fit.v_hat / 2000))
    assert abs(fit.theta_hat - 2.0) < 5 * summary.sigma_hat


def test_ate_site_summaries_needs_three_sites():
    with pytest.raises(ValueError, match="three"):
        ate_site_summaries([_site(1), _site(2)], _target())


def test_identical_sites_have_zero_local_dissimilarity():
    data = _site(5, n=800)
    summaries, table = ate_site_summaries([data, data, data], _target())
    assert [s.site_id for s in summaries] == [1, 2, 3]
    assert np.all(table.l_hat == 0)
    assert not table.has_global


def test_shifted_effect_separates():
    target = _target()
    sites = [_site(10), _site(11), _site(12, effect=3.0, shift=0.5)]
    summaries, table = ate_site_summaries(sites, target)
    statistic = np.abs(table.l_hat / table.se_l)
    # pairs (1,2), (1,3), (2,3)
    assert statistic[0] < 3
    assert statistic[1] > 5
    assert statistic[2] > 5


@pytest.mark.slow
def test_interval_coverage():
    """Misspecified propensity, correct outcome model: nominal coverage."""
    z = 1.959963984540054
    target = _target(size=20_000)
    truth = 2.0 + 0.5 * target.X_target[:, 1].mean()
    covered = 0
    reps = 200
    bases = BasisConfig(propensity=(0,))
    for r in range(reps):
        fit = fit_ate_site(_site(1000 + r, n=1000), target, bases)
        se = math.sqrt(fit.v_hat / fit.n)
        covered += abs(fit.theta_hat - truth) <= z * se
    assert covered / reps >= 0.9
