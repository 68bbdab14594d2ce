import math

import numpy as np
import pytest
import scipy.linalg
import scipy.optimize

from rifl.errors import DimensionMismatchError
from rifl.highdim.dissimilarity import (
    BiasComponents,
    HighDimConfig,
    bias_components,
    build_from_states,
    debiased_coordinate,
    dissimilarity_highdim,
    highdim_site_round1,
    highdim_site_round2,
    split_site_data,
)
from rifl.highdim.lasso import lasso_fit
from rifl.highdim.projection import (
    constraint_violation,
    default_penalty,
    default_tau,
    projection_direction,
)
from rifl.stats_kernel import Family, RandomStream, normal_quantile


def _soft_threshold(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def test_lasso_orthonormal_design_is_soft_threshold():
    n = 32
    X = scipy.linalg.hadamard(n)[:, 1:6].astype(float)
    rng = RandomStream(3).generator()
    y = 2.0 + X @ np.array([1.0, -0.5, 0.05, 0.0, 0.3]) + rng.normal(scale=0.1, size=n)
    lam = 0.1
    fit = lasso_fit(X, y, Family.LINEAR, lambda_grid=[lam])
    expected = _soft_threshold(X.T @ (y - y.mean()) / n, lam)
    assert np.allclose(fit.theta_tilde, expected, atol=1e-6)
    assert fit.mu_tilde == pytest.approx(y.mean(), abs=1e-6)
    assert fit.lam == lam


def test_lasso_cross_validation_recovers_support():
    rng = RandomStream(5).generator()
    n, d = 300, 40
    X = rng.normal(size=(n, d))
    theta = np.zeros(d)
    theta[:3] = [1.0, -1.0, 0.5]
    y = X @ theta + rng.normal(size=n)
    fit = lasso_fit(X, y, Family.LINEAR, seed=1)
    assert set(range(3)) <= set(fit.support)
    assert fit.lam > 0


def test_lasso_needs_enough_samples():
    with pytest.raises(ValueError, match="n >="):
        lasso_fit(np.ones((5, 2)), np.ones(5), Family.LINEAR)


def test_projection_identity_gram():
    gamma = np.array([1.0, -2.0, 0.5])
    lam = 0.2
    rows = np.eye(3)
    direction = projection_direction(np.eye(3), gamma, rows, lam, tau=1e6)
    assert np.allclose(direction.u, (1 - lam) * gamma, atol=1e-6)
    assert direction.lam == lam


def test_projection_matches_dense_qp():
    rng = RandomStream(21).generator()
    x_rows = rng.normal(size=(50, 3))
    sigma = x_rows.T @ x_rows / 50
    gamma = np.array([0.7, -0.2, 1.1])
    lam = 0.15
    norm = np.linalg.norm(gamma)
    direction = projection_direction(sigma, gamma, x_rows, lam, tau=1e6)

    def bounds(u):
        su = sigma @ u
        return np.concatenate(
            [
                norm * lam - (su - gamma),
                norm * lam + (su - gamma),
                [norm**2 * lam - (gamma @ su - norm**2)],
                [norm**2 * lam + (gamma @ su - norm**2)],
            ],
        )

    oracle = scipy.optimize.minimize(
        lambda u: u @ sigma @ u,
        np.linalg.solve(sigma, gamma),
        jac=lambda u: 2 * sigma @ u,
        constraints=[{"type": "ineq", "fun": bounds}],
        method="SLSQP",
        options={"ftol": 1e-12, "maxiter": 500},
    )
    assert oracle.success
    ours = direction.u @ sigma @ direction.u
    assert ours == pytest.approx(oracle.fun, abs=1e-4)
    assert constraint_violation(direction.u, sigma, gamma, x_rows, lam, 1e6) <= 1e-6


def test_projection_relaxes_lam_only():
    rng = RandomStream(2).generator()
    x_rows = rng.normal(size=(40, 3))
    sigma = x_rows.T @ x_rows / 40
    gamma = np.array([1.0, 0.0, 0.0])
    direction = projection_direction(sigma, gamma, x_rows, 0.1, tau=1e-3, max_relaxations=10)
    assert direction.lam > 0.1
    assert direction.tau == 1e-3
    assert np.max(np.abs(x_rows @ direction.u)) <= 1e-3 * (1 + 1e-6)


@pytest.mark.parametrize(("scale", "relaxed"), [(0.1, True), (3.0, False)])
def test_projection_bound_scales_with_squared_norm(scale, relaxed):
    rng = RandomStream(5).generator()
    x_rows = rng.normal(size=(40, 3))
    sigma = x_rows.T @ x_rows / 40
    gamma = np.array([scale, 0.0, 0.0])
    free = projection_direction(sigma, gamma, x_rows, 0.1, tau=1e6)
    # just loose enough for the unrestricted direction if the bound were |gamma| tau
    tau = 1.01 * np.max(np.abs(x_rows @ free.u)) / scale
    direction = projection_direction(sigma, gamma, x_rows, 0.1, tau=tau, max_relaxations=10)
    assert (direction.lam > 0.1) == relaxed
    bound = scale**2 * tau
    assert np.max(np.abs(x_rows @ direction.u)) <= bound * (1 + 1e-6)
    assert constraint_violation(direction.u, sigma, gamma, x_rows, direction.lam, tau) <= 1e-6


def test_projection_zero_loading():
    with pytest.raises(ValueError, match="zero"):
        projection_direction(np.eye(2), np.zeros(2), np.eye(2), 0.1, 1.0)


def test_default_constants():
    assert default_penalty(200, 500) == pytest.approx(1.1 * math.sqrt(math.log(200) / 500))
    assert default_tau(500) == pytest.approx(math.sqrt(2 * math.log(500)))


def test_split_halves():
    rng = RandomStream(0).generator()
    data = split_site_data(np.zeros((11, 2)), np.zeros(11), "linear", rng)
    assert len(data.s1) == 6
    assert len(data.s2) == 5
    assert not set(data.s1) & set(data.s2)
    assert data.family == Family.LINEAR


def test_dissimilarity_formula():
    comp_l = BiasComponents(delta_hat=0.1, v_hat=0.01)
    comp_k = BiasComponents(delta_hat=-0.05, v_hat=0.02)
    d_hat, se = dissimilarity_highdim(
        np.array([1.0, 0.0]),
        np.array([0.0, 0.0]),
        comp_l,
        comp_k,
        100,
        200,
    )
    assert d_hat == pytest.approx(1.1)
    assert se == pytest.approx(math.sqrt(0.13))
    d_hat, _ = dissimilarity_highdim(
        np.zeros(2),
        np.zeros(2),
        BiasComponents(-0.3, 0.0),
        BiasComponents(0.0, 0.0),
        100,
        100,
    )
    assert d_hat == 0.0


def test_negative_variance_rejected():
    with pytest.raises(ValueError):
        BiasComponents(delta_hat=0.0, v_hat=-1.0)


def _linear_site(seed: int, n: int, theta: np.ndarray, intercept: float = 0.0):
    rng = RandomStream(seed).generator()
    X = rng.normal(size=(n, theta.shape[0]))
    return X, intercept + X @ theta + rng.normal(size=n)


def test_bias_components_zero_loading():
    theta = np.zeros(15)
    theta[0] = 1.0
    X, y = _linear_site(1, 120, theta)
    data = split_site_data(X, y, Family.LINEAR, RandomStream(1).generator())
    fit = lasso_fit(*data.first_half(), Family.LINEAR, seed=0)
    components = bias_components(data, fit, np.zeros(15))
    assert components.delta_hat == 0.0
    assert components.v_hat == 0.0
    with pytest.raises(DimensionMismatchError):
        bias_components(data, fit, np.zeros(3))


def test_debiased_coordinate_close_to_truth():
    d = 30
    theta = np.zeros(d)
    theta[:3] = [1.0, 0.5, -0.5]
    X, y = _linear_site(4, 600, theta)
    data = split_site_data(X, y, Family.LINEAR, RandomStream(4).generator())
    fit = lasso_fit(*data.first_half(), Family.LINEAR, seed=0)
    summary = debiased_coordinate(data, fit, 1)
    assert summary.n == 600
    assert 0 < summary.sigma_hat < 0.2
    assert abs(summary.point - 1.0) < 4 * summary.sigma_hat
    with pytest.raises(ValueError):
        debiased_coordinate(data, fit, d + 1)


def test_two_round_pipeline():
    d = 25
    theta = np.zeros(d)
    theta[:2] = [0.8, -0.4]
    shifted = theta.copy()
    shifted[2:5] = 0.6
    config = HighDimConfig()
    states = []
    for l, t in enumerate([theta, theta, shifted]):
        X, y = _linear_site(10 + l, 300, t, intercept=0.05 * l)
        states.append(
            highdim_site_round1(
                X,
                y,
                Family.LINEAR,
                site_id=l + 1,
                coordinate=1,
                stream=RandomStream(9).site_stream(l),
                config=config,
            ),
        )
    thetas = {s.site_id: s.fit.theta_tilde for s in states}
    components = highdim_site_round2(states[0], thetas, config)
    assert sorted(components) == [2, 3]
    summaries, table = build_from_states(states, config)
    assert [s.site_id for s in summaries] == [1, 2, 3]
    assert table.has_global
    d_matrix = table.as_matrix(table.d_hat)
    assert d_matrix[0, 2] > d_matrix[0, 1]
    assert np.all(table.se_d >= math.sqrt(1 / 300))


def test_round1_is_deterministic():
    theta = np.zeros(20)
    theta[0] = 1.0
    X, y = _linear_site(2, 200, theta)
    a = highdim_site_round1(X, y, "linear", 1, 1, RandomStream(5).site_stream(0))
    b = highdim_site_round1(X, y, "linear", 1, 1, RandomStream(5).site_stream(0))
    assert np.array_equal(a.fit.theta_tilde, b.fit.theta_tilde)
    assert np.array_equal(a.data.s1, b.data.s1)
    assert np.array_equal(a.summary.beta_hat, b.summary.beta_hat)
    assert a.summary.sigma_hat == b.summary.sigma_hat


@pytest.mark.slow
def test_debiased_distance_calibration():
    """Equal parameters: the standardized distance rarely exceeds z_alpha."""
    alpha = 0.05
    z = normal_quantile(alpha)
    d = 40
    theta = np.zeros(d)
    theta[:3] = [1.0, -0.5, 0.5]
    reps = 100
    exceed = 0
    for r in range(reps):
        states = [
            highdim_site_round1(
                *_linear_site(1000 * r + l, 400, theta),
                Family.LINEAR,
                site_id=l + 1,
                coordinate=1,
                stream=RandomStream(r).site_stream(l),
            )
            for l in range(2)
        ]
        thetas = {s.site_id: s.fit.theta_tilde for s in states}
        comps = [highdim_site_round2(s, thetas) for s in states]
        d_hat, se = dissimilarity_highdim(
            states[0].fit.theta_tilde,
            states[1].fit.theta_tilde,
            comps[0][2],
            comps[1][1],
            400,
            400,
        )
        exceed += d_hat / se >= z
    assert exceed / reps <= alpha + 0.03
