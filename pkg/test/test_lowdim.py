import math

import numpy as np
import pytest

from rifl.errors import DegenerateFunctionalError, DimensionMismatchError
from rifl.lowdim import (
    Functional,
    ParametricSiteFit,
    build_lowdim_inputs,
    delta_method_summary,
    dissimilarity_lowdim,
    fit_site_glm,
)
from rifl.stats_kernel import Family, RandomStream, normal_quantile


def _fit(theta, c_hat=None, n=100, site_id=1):
    theta = np.asarray(theta, dtype=float)
    c_hat = np.eye(theta.shape[0]) if c_hat is None else c_hat
    return ParametricSiteFit(theta_hat=theta, c_hat=c_hat, n=n, site_id=site_id)


def test_delta_method_coordinate():
    summary = delta_method_summary(_fit([0.5, 1.0]), Functional.coordinate(0))
    assert summary.point == 0.5
    assert summary.sigma_hat == pytest.approx(0.1)


def test_delta_method_linear():
    summary = delta_method_summary(_fit([1.0, 2.0], n=400), Functional.linear([1.0, 1.0]))
    assert summary.point == pytest.approx(3.0)
    assert summary.sigma_hat == pytest.approx(math.sqrt(2) / 20)


def test_delta_method_quadratic_norm():
    summary = delta_method_summary(_fit([1.0, 0.0]), Functional.quadratic_norm())
    assert summary.point == pytest.approx(1.0)
    assert summary.sigma_hat == pytest.approx(0.2)


def test_delta_method_subvector_is_multivariate():
    c_hat = np.array([[2.0, 0.5, 0.0], [0.5, 1.0, 0.0], [0.0, 0.0, 3.0]])
    summary = delta_method_summary(_fit([1.0, 2.0, 3.0], c_hat), Functional.subvector([0, 2]))
    assert summary.is_multivariate
    assert np.array_equal(summary.beta_hat, [1.0, 3.0])
    assert np.allclose(summary.omega_hat, np.array([[2.0, 0.0], [0.0, 3.0]]) / 100)


def test_delta_method_zero_gradient():
    with pytest.raises(DegenerateFunctionalError):
        delta_method_summary(_fit([0.0, 0.0]), Functional.quadratic_norm())


@pytest.mark.parametrize(
    "functional",
    [
        Functional.coordinate(1),
        Functional.subvector([0, 2]),
        Functional.linear([0.3, -1.0, 2.0]),
        Functional.quadratic_norm(),
    ],
)
def test_jacobian_matches_finite_differences(functional):
    theta = RandomStream(17).generator().normal(size=3)
    jac = functional.jacobian(theta)
    eps = 1e-6
    for j in range(3):
        step = np.zeros(3)
        step[j] = eps
        numeric = (functional.value(theta + step) - functional.value(theta - step)) / (2 * eps)
        assert np.allclose(jac[:, j], numeric, rtol=1e-6, atol=1e-8)


def test_dissimilarity_identical():
    d_hat, se = dissimilarity_lowdim(_fit([1.0, 2.0], n=100), _fit([1.0, 2.0], n=400))
    assert d_hat == 0.0
    assert se == pytest.approx(math.sqrt(1 / 100))


def test_dissimilarity_formula():
    d_hat, se = dissimilarity_lowdim(_fit([1.0, 0.0]), _fit([0.0, 0.0]))
    assert d_hat == pytest.approx(1.0)
    assert se == pytest.approx(0.3)


def test_dissimilarity_symmetric():
    rng = RandomStream(1).generator()
    a = _fit(rng.normal(size=4), np.diag(rng.uniform(1, 2, 4)), n=150)
    b = _fit(rng.normal(size=4), np.diag(rng.uniform(1, 2, 4)), n=90)
    assert dissimilarity_lowdim(a, b) == dissimilarity_lowdim(b, a)


def test_dissimilarity_dimension_mismatch():
    with pytest.raises(DimensionMismatchError):
        dissimilarity_lowdim(_fit([1.0]), _fit([1.0, 2.0]))


def test_fit_rejects_bad_covariance():
    with pytest.raises(DimensionMismatchError):
        _fit([1.0, 2.0], np.eye(3))
    with pytest.raises(ValueError, match="symmetric"):
        _fit([1.0, 2.0], np.array([[1.0, 0.2], [0.0, 1.0]]))


def _logistic_site(rng, theta, n, intercept=0.0):
    X = rng.normal(size=(n, theta.shape[0]))
    p = 1 / (1 + np.exp(-(intercept + X @ theta)))
    return X, (rng.random(n) < p).astype(float)


def test_fit_site_glm_separates_intercept():
    rng = RandomStream(4).generator()
    theta = np.array([1.0, -0.5, 0.0])
    X, y = _logistic_site(rng, theta, 5000, intercept=0.5)
    fit = fit_site_glm(X, y, Family.LOGISTIC, site_id=3)
    assert fit.d == 3
    assert fit.site_id == 3
    se = np.sqrt(np.diag(fit.c_hat) / fit.n)
    assert np.all(np.abs(fit.theta_hat - theta) < 4 * se)
    assert fit.intercept == pytest.approx(0.5, abs=0.15)


def test_build_lowdim_inputs():
    rng = RandomStream(8).generator()
    theta = np.array([0.5, 0.5])
    fits = [
        fit_site_glm(*_logistic_site(rng, theta, 800), Family.LOGISTIC, site_id=l + 1)
        for l in range(4)
    ]
    summaries, table = build_lowdim_inputs(fits, Functional.coordinate(0))
    assert [s.site_id for s in summaries] == [1, 2, 3, 4]
    assert table.n_sites == 4
    assert table.has_global
    assert table.n_pairs == 6
    assert np.all(table.se_d >= math.sqrt(1 / 800))


@pytest.mark.slow
def test_dissimilarity_calibration():
    """Under equal parameters |D - 0| / SE rarely exceeds the normal quantile."""
    alpha = 0.05
    z = normal_quantile(alpha)
    theta = np.array([0.5, -0.5, 0.25])
    exceed = 0
    reps = 400
    for r in range(reps):
        rng = RandomStream(31, r).generator()
        a = fit_site_glm(*_logistic_site(rng, theta, 1000), Family.LOGISTIC)
        b = fit_site_glm(*_logistic_site(rng, theta, 1000), Family.LOGISTIC)
        d_hat, se = dissimilarity_lowdim(a, b)
        exceed += d_hat / se >= z
    assert exceed / reps <= alpha + 0.03
