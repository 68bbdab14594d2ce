"""
Debiased site summaries and pairwise distances for high-dimensional GLMs.

Each site splits its sample once. The penalized fit only sees the first half;
every debiasing quantity (Gram matrix, residuals, weights) only sees the
second half. Sites exchange their penalized fits (round 1) and then the bias
components of every pair (round 2).

Bias components are computed with the loading gamma = theta_own - theta_peer,
so the distance estimate for a pair adds both sites' corrections with a plus
sign and is symmetric in the pair.
"""

import dataclasses
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass

import numpy as np
import scipy.special

from rifl.core import local_dissimilarity
from rifl.errors import DimensionMismatchError, NumericError
from rifl.highdim.lasso import HighDimFit, lasso_fit
from rifl.highdim.projection import (
    default_penalty,
    default_tau,
    projection_direction,
)
from rifl.stats_kernel import Family, RandomStream
from rifl.structs import DissimilarityTable, SiteSummary, pair_indices

PROBABILITY_CLIP = 1e-4


@dataclass(frozen=True)
class HighDimConfig:
    kappa: float = 1.1
    """Penalty constant of the projection program, lam = kappa * sqrt(log d / |S2|)."""
    tau: float | None = None
    """Bound on max_i |u^T x_i|. Default sqrt(2 log |S2|)."""
    folds: int = 5
    relax_factor: float = 1.5
    max_relaxations: int = 5
    lambda_grid: tuple[float, ...] | None = None
    """Candidate lasso penalties. None lets cross validation build its own path."""

    def __post_init__(self):
        if self.kappa <= 0:
            msg = f"kappa must be positive, got {self.kappa}"
            raise ValueError(msg)
        if self.folds < 2:
            msg = f"Cross validation needs at least 2 folds, got {self.folds}"
            raise ValueError(msg)
        if self.relax_factor <= 1:
            msg = f"relax_factor must exceed 1, got {self.relax_factor}"
            raise ValueError(msg)

    def replace(self, **kwargs) -> "HighDimConfig":
        return dataclasses.replace(self, **kwargs)


@dataclass(frozen=True)
class SplitSiteData:
    X: np.ndarray
    y: np.ndarray
    family: Family
    s1: np.ndarray
    s2: np.ndarray

    def __post_init__(self):
        n = self.X.shape[0]
        if self.y.shape != (n,):
            msg = f"Response has shape {self.y.shape}, expected ({n},)"
            raise ValueError(msg)
        joined = np.sort(np.concatenate([self.s1, self.s2]))
        if not np.array_equal(joined, np.arange(n)):
            msg = "The two halves must partition the sample"
            raise ValueError(msg)
        object.__setattr__(self, "family", Family(self.family))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def first_half(self) -> tuple[np.ndarray, np.ndarray]:
        return self.X[self.s1], self.y[self.s1]

    def second_half(self) -> tuple[np.ndarray, np.ndarray]:
        return self.X[self.s2], self.y[self.s2]


def split_site_data(X, y, family, rng: np.random.Generator) -> SplitSiteData:
    """Random split with |S1| = ceil(n / 2)."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = X.shape[0]
    perm = rng.permutation(n)
    n1 = math.ceil(n / 2)
    return SplitSiteData(
        X=X,
        y=y,
        family=Family(family),
        s1=np.sort(perm[:n1]),
        s2=np.sort(perm[n1:]),
    )


@dataclass(frozen=True)
class BiasComponents:
    delta_hat: float
    v_hat: float
    u_hat: np.ndarray | None = None
    """Projection direction over (intercept, covariates). Not exchanged between sites."""

    def __post_init__(self):
        if not self.v_hat >= 0:
            msg = f"Variance component must be nonnegative, got {self.v_hat}"
            raise ValueError(msg)


@dataclass(frozen=True)
class _SecondHalf:
    x_tilde: np.ndarray
    residual: np.ndarray
    weights: np.ndarray
    dispersion: float

    @property
    def n2(self) -> int:
        return self.x_tilde.shape[0]

    @property
    def gram(self) -> np.ndarray:
        return self.x_tilde.T @ self.x_tilde / self.n2


def _second_half(data: SplitSiteData, fit: HighDimFit) -> _SecondHalf:
    X2, y2 = data.second_half()
    eta = fit.linear_predictor(X2)
    x_tilde = np.column_stack([np.ones(X2.shape[0]), X2])
    if data.family == Family.LOGISTIC:
        prob = np.clip(scipy.special.expit(eta), PROBABILITY_CLIP, 1 - PROBABILITY_CLIP)
        residual = y2 - prob
        weights = 1 / (prob * (1 - prob))
        dispersion = 1.0
    else:
        residual = y2 - eta
        weights = np.ones_like(eta)
        dispersion = float(np.mean(residual**2))
    if not np.all(np.isfinite(weights)):
        msg = "Debiasing weights are not finite"
        raise NumericError(msg)
    return _SecondHalf(x_tilde, residual, weights, dispersion)


def _debias(half: _SecondHalf, gamma_full: np.ndarray, config: HighDimConfig):
    d = half.x_tilde.shape[1] - 1
    lam = default_penalty(d, half.n2, config.kappa)
    tau = config.tau if config.tau is not None else default_tau(half.n2)
    direction = projection_direction(
        half.gram,
        gamma_full,
        half.x_tilde,
        lam,
        tau,
        relax_factor=config.relax_factor,
        max_relaxations=config.max_relaxations,
    )
    u = direction.u
    delta = float(u @ (half.x_tilde.T @ (half.weights * half.residual)) / half.n2)
    projected = half.x_tilde @ u
    v_hat = half.dispersion * float(np.sum(half.weights * projected**2)) / half.n2**2
    return BiasComponents(delta_hat=delta, v_hat=v_hat, u_hat=u)


def bias_components(
    data: SplitSiteData,
    fit: HighDimFit,
    gamma_tilde: np.ndarray,
    config: HighDimConfig | None = None,
) -> BiasComponents:
    """
    Debiasing term and variance of <theta_hat - theta, gamma> on the second half.

    delta_hat = u^T mean(W x (y - fitted)),
    v_hat     = u^T [sum W x x^T] u / |S2|^2, times the residual variance for
    the linear family.
    """
    config = config or HighDimConfig()
    gamma_tilde = np.asarray(gamma_tilde, dtype=float)
    if gamma_tilde.shape != (data.d,):
        msg = f"Loading has {gamma_tilde.shape[0]} entries, expected {data.d}"
        raise DimensionMismatchError(msg)
    half = _second_half(data, fit)
    if not np.any(gamma_tilde):
        return BiasComponents(
            delta_hat=0.0,
            v_hat=0.0,
            u_hat=np.zeros(data.d + 1),
        )
    return _debias(half, np.concatenate([[0.0], gamma_tilde]), config)


def debiased_coordinate(
    data: SplitSiteData,
    fit: HighDimFit,
    j: int,
    config: HighDimConfig | None = None,
    site_id: int = 1,
) -> SiteSummary:
    """One-step debiased estimate of the 1-based coordinate j."""
    config = config or HighDimConfig()
    if not 1 <= j <= data.d:
        msg = f"Coordinate must lie in 1..{data.d}, got {j}"
        raise ValueError(msg)
    half = _second_half(data, fit)
    target = np.zeros(data.d + 1)
    target[j] = 1.0
    components = _debias(half, target, config)
    return SiteSummary(
        site_id=site_id,
        beta_hat=np.array([fit.theta_tilde[j - 1] + components.delta_hat]),
        n=data.n,
        sigma_hat=math.sqrt(components.v_hat),
    )


def dissimilarity_highdim(
    theta_l: np.ndarray,
    theta_k: np.ndarray,
    components_l: BiasComponents,
    components_k: BiasComponents,
    n_l: int,
    n_k: int,
) -> tuple[float, float]:
    """components_l is site l's correction towards k and vice versa."""
    if components_l is None or components_k is None:
        msg = "Both sites' bias components are required"
        raise ValueError(msg)
    gamma = np.asarray(theta_l) - np.asarray(theta_k)
    raw = float(gamma @ gamma) + 2 * components_l.delta_hat + 2 * components_k.delta_hat
    se = math.sqrt(
        4 * components_l.v_hat + 4 * components_k.v_hat + 1 / min(n_l, n_k),
    )
    return max(raw, 0.0), se


@dataclass(frozen=True)
class HighDimSiteState:
    site_id: int
    data: SplitSiteData
    fit: HighDimFit
    summary: SiteSummary


def highdim_site_round1(
    X: np.ndarray,
    y: np.ndarray,
    family: Family | str,
    site_id: int,
    coordinate: int,
    stream: RandomStream,
    config: HighDimConfig | None = None,
) -> HighDimSiteState:
    """Split, fit the lasso on the first half and debias the target coordinate."""
    config = config or HighDimConfig()
    rng = stream.generator()
    data = split_site_data(X, y, family, rng)
    cv_seed = int(rng.integers(0, 2**31 - 1))
    X1, y1 = data.first_half()
    fit = lasso_fit(
        X1,
        y1,
        data.family,
        lambda_grid=config.lambda_grid,
        folds=config.folds,
        seed=cv_seed,
    )
    summary = debiased_coordinate(data, fit, coordinate, config, site_id=site_id)
    return HighDimSiteState(site_id=site_id, data=data, fit=fit, summary=summary)


def highdim_site_round2(
    state: HighDimSiteState,
    peer_thetas: Mapping[int, np.ndarray],
    config: HighDimConfig | None = None,
) -> dict[int, BiasComponents]:
    """Bias components towards every peer, keyed by peer site id."""
    return {
        peer_id: bias_components(
            state.data,
            state.fit,
            state.fit.theta_tilde - np.asarray(theta),
            config,
        )
        for peer_id, theta in sorted(peer_thetas.items())
        if peer_id != state.site_id
    }


def build_highdim_inputs(
    summaries: Sequence[SiteSummary],
    thetas: Sequence[np.ndarray],
    components: Sequence[Mapping[int, BiasComponents]],
) -> tuple[list[SiteSummary], DissimilarityTable]:
    """`components[i]` holds site i's corrections keyed by peer site id."""
    n_sites = len(summaries)
    if not len(thetas) == len(components) == n_sites:
        msg = "Summaries, fits and bias components must cover the same sites"
        raise ValueError(msg)
    l_hat, se_l = local_dissimilarity(summaries)
    rows, cols = pair_indices(n_sites)
    d_hat = np.empty(rows.shape[0])
    se_d = np.empty(rows.shape[0])
    for i, (l, k) in enumerate(zip(rows, cols, strict=True)):
        id_l, id_k = summaries[l].site_id, summaries[k].site_id
        if id_k not in components[l] or id_l not in components[k]:
            msg = f"Missing bias components for sites {id_l} and {id_k}"
            raise ValueError(msg)
        d_hat[i], se_d[i] = dissimilarity_highdim(
            thetas[l],
            thetas[k],
            components[l][id_k],
            components[k][id_l],
            summaries[l].n,
            summaries[k].n,
        )
    table = DissimilarityTable(
        n_sites=n_sites,
        l_hat=l_hat,
        se_l=se_l,
        d_hat=d_hat,
        se_d=se_d,
    )
    return list(summaries), table


def build_from_states(
    states: Sequence[HighDimSiteState],
    config: HighDimConfig | None = None,
) -> tuple[list[SiteSummary], DissimilarityTable]:
    """Run round 2 in process, with every site seeing every other site's fit."""
    thetas = {s.site_id: s.fit.theta_tilde for s in states}
    components = [highdim_site_round2(s, thetas, config) for s in states]
    return build_highdim_inputs(
        [s.summary for s in states],
        [s.fit.theta_tilde for s in states],
        components,
    )
