"""
Doubly robust estimation of a target population's average treatment effect
from one source site, with exponential tilting for the covariate shift and an
influence function variance.

Working models (all with an intercept):
    propensity      P(A = 1 | x) = expit(alpha^T x_a)
    outcome         E(Y | A = a, x) = gamma_a^T w
    density ratio   f_target(x) / f_source(x) = exp(eta^T w_t)
where x_a, w and w_t are the basis vectors chosen by `BasisConfig`.
"""

import dataclasses
import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
import scipy.special

from rifl.core import local_table
from rifl.errors import DimensionMismatchError
from rifl.stats_kernel import Family, irls_glm_fit, newton_solve, psd_inverse
from rifl.structs import DissimilarityTable, SiteSummary

PROPENSITY_CLIP = 0.01


@dataclass(frozen=True)
class CausalSiteData:
    X: np.ndarray
    A: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        A = np.asarray(self.A, dtype=float).reshape(-1)
        Y = np.asarray(self.Y, dtype=float).reshape(-1)
        n = X.shape[0]
        if A.shape != (n,) or Y.shape != (n,):
            msg = f"Treatment and outcome must have {n} entries"
            raise DimensionMismatchError(msg)
        if not np.all((A == 0) | (A == 1)):
            msg = "Treatment indicators must be 0 or 1"
            raise ValueError(msg)
        if A.min() == A.max():
            msg = "Both treatment arms must be nonempty"
            raise ValueError(msg)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "Y", Y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class TargetSample:
    X_target: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X_target, dtype=float))
        if X.shape[0] < 1:
            msg = "Target sample is empty"
            raise ValueError(msg)
        object.__setattr__(self, "X_target", X)

    @property
    def size(self) -> int:
        return self.X_target.shape[0]


@dataclass(frozen=True)
class BasisConfig:
    """Covariate columns (0-based) entering each working model. None means all
    columns. An intercept is always prepended."""

    propensity: tuple[int, ...] | None = None
    outcome: tuple[int, ...] | None = None
    density_ratio: tuple[int, ...] | None = None

    def design(self, X: np.ndarray, columns: tuple[int, ...] | None) -> np.ndarray:
        chosen = X if columns is None else X[:, list(columns)]
        return np.column_stack([np.ones(X.shape[0]), chosen])

    def replace(self, **kwargs) -> "BasisConfig":
        return dataclasses.replace(self, **kwargs)


@dataclass(frozen=True)
class NuisanceFits:
    alpha_hat: np.ndarray
    gamma0_hat: np.ndarray
    gamma1_hat: np.ndarray
    eta_hat: np.ndarray
    bases: BasisConfig = BasisConfig()

    def __post_init__(self):
        for name in ("alpha_hat", "gamma0_hat", "gamma1_hat", "eta_hat"):
            if not np.all(np.isfinite(getattr(self, name))):
                msg = f"{name} is not finite"
                raise ValueError(msg)


def _density_ratio_equations(w_src: np.ndarray, target_mean: np.ndarray):
    def residual(eta):
        return np.mean(np.exp(w_src @ eta)[:, None] * w_src, axis=0) - target_mean

    def jacobian(eta):
        omega = np.exp(w_src @ eta)
        return (w_src * omega[:, None]).T @ w_src / w_src.shape[0]

    return residual, jacobian


def fit_nuisances(
    data: CausalSiteData,
    target: TargetSample,
    bases: BasisConfig | None = None,
) -> NuisanceFits:
    bases = bases or BasisConfig()
    if target.X_target.shape[1] != data.p:
        msg = f"Target has {target.X_target.shape[1]} covariates, source has {data.p}"
        raise DimensionMismatchError(msg)

    x_prop = bases.design(data.X, bases.propensity)
    alpha = irls_glm_fit(x_prop, data.A, Family.LOGISTIC).coefficients

    w = bases.design(data.X, bases.outcome)
    gammas = []
    for arm in (0, 1):
        rows = data.A == arm
        gammas.append(irls_glm_fit(w[rows], data.Y[rows], Family.LINEAR).coefficients)

    w_src = bases.design(data.X, bases.density_ratio)
    w_tgt = bases.design(target.X_target, bases.density_ratio)
    residual, jacobian = _density_ratio_equations(w_src, w_tgt.mean(axis=0))
    eta = newton_solve(residual, jacobian, np.zeros(w_src.shape[1]), tol=1e-9)
    return NuisanceFits(
        alpha_hat=alpha,
        gamma0_hat=gammas[0],
        gamma1_hat=gammas[1],
        eta_hat=eta,
        bases=bases,
    )


@dataclass(frozen=True)
class _Evaluated:
    """Working models evaluated on the source sample."""

    x_prop: np.ndarray
    w: np.ndarray
    w_tilt: np.ndarray
    propensity: np.ndarray
    m0: np.ndarray
    m1: np.ndarray
    omega: np.ndarray
    xi: np.ndarray
    """Per-observation augmentation term; its mean is the correction delta_hat."""


def _evaluate(data: CausalSiteData, fits: NuisanceFits) -> _Evaluated:
    bases = fits.bases
    x_prop = bases.design(data.X, bases.propensity)
    w = bases.design(data.X, bases.outcome)
    w_tilt = bases.design(data.X, bases.density_ratio)
    raw = scipy.special.expit(x_prop @ fits.alpha_hat)
    clipped = np.clip(raw, PROPENSITY_CLIP, 1 - PROPENSITY_CLIP)
    if np.any(clipped != raw):
        logging.debug(
            f"Clipped {int(np.sum(clipped != raw))} propensity scores to "
            f"[{PROPENSITY_CLIP}, {1 - PROPENSITY_CLIP}]",
        )
    m0 = w @ fits.gamma0_hat
    m1 = w @ fits.gamma1_hat
    omega = np.exp(w_tilt @ fits.eta_hat)
    a = data.A
    xi = omega * (a / clipped * (data.Y - m1) - (1 - a) / (1 - clipped) * (data.Y - m0))
    return _Evaluated(x_prop, w, w_tilt, clipped, m0, m1, omega, xi)


def outcome_contrast(target: TargetSample, fits: NuisanceFits) -> float:
    """Target average of m(1, x) - m(0, x)."""
    w_tgt = fits.bases.design(target.X_target, fits.bases.outcome)
    return float(np.mean(w_tgt @ (fits.gamma1_hat - fits.gamma0_hat)))


def dr_estimate(data: CausalSiteData, target: TargetSample, fits: NuisanceFits) -> float:
    return outcome_contrast(target, fits) + float(np.mean(_evaluate(data, fits).xi))


def influence_values(
    data: CausalSiteData,
    target: TargetSample,
    fits: NuisanceFits,
) -> np.ndarray:
    """
    Estimated influence function of the doubly robust estimator at each source
    observation: the augmentation term plus the first-order effect of
    estimating each nuisance parameter. Variation from the target sample is
    ignored, which assumes it is much larger than the source sample.
    """
    ev = _evaluate(data, fits)
    a = data.A
    y = data.Y
    h = ev.propensity
    w_tgt = fits.bases.design(target.X_target, fits.bases.outcome)
    w_tgt_mean = w_tgt.mean(axis=0)
    tilt_tgt_mean = fits.bases.design(
        target.X_target,
        fits.bases.density_ratio,
    ).mean(axis=0)

    def mean_outer(x: np.ndarray, weights: np.ndarray) -> np.ndarray:
        return (x * weights[:, None]).T @ x / x.shape[0]

    def mean_weighted(x: np.ndarray, weights: np.ndarray) -> np.ndarray:
        return np.mean(x * weights[:, None], axis=0)

    tau = ev.xi.copy()

    # control arm outcome model
    d_gamma0 = -w_tgt_mean + mean_weighted(ev.w, ev.omega * (1 - a) / (1 - h))
    score0 = ev.w * ((1 - a) * (y - ev.m0))[:, None]
    tau += score0 @ (psd_inverse(mean_outer(ev.w, 1 - a)) @ d_gamma0)

    # treated arm outcome model
    d_gamma1 = w_tgt_mean - mean_weighted(ev.w, ev.omega * a / h)
    score1 = ev.w * (a * (y - ev.m1))[:, None]
    tau += score1 @ (psd_inverse(mean_outer(ev.w, a)) @ d_gamma1)

    # density ratio: the Jacobian mean_outer(w_tilt, omega) is positive definite,
    # so this correction is subtracted
    d_eta = mean_weighted(ev.w_tilt, ev.xi)
    tilt_score = ev.w_tilt * ev.omega[:, None] - tilt_tgt_mean
    tau -= tilt_score @ (psd_inverse(mean_outer(ev.w_tilt, ev.omega)) @ d_eta)

    # propensity
    d_alpha = mean_weighted(
        ev.x_prop,
        ev.omega * (-a * (1 - h) / h * (y - ev.m1) - (1 - a) * h / (1 - h) * (y - ev.m0)),
    )
    prop_score = ev.x_prop * (a - h)[:, None]
    tau += prop_score @ (psd_inverse(mean_outer(ev.x_prop, h * (1 - h))) @ d_alpha)
    return tau


def influence_variance(
    data: CausalSiteData,
    target: TargetSample,
    fits: NuisanceFits,
) -> float:
    """V_hat, the asymptotic variance of sqrt(n) (theta_hat - theta)."""
    tau = influence_values(data, target, fits)
    return float(np.mean((tau - tau.mean()) ** 2))


@dataclass(frozen=True)
class AteSiteFit:
    theta_hat: float
    v_hat: float
    n: int
    fits: NuisanceFits

    def summary(self, site_id: int) -> SiteSummary:
        return SiteSummary(
            site_id=site_id,
            beta_hat=np.array([self.theta_hat]),
            n=self.n,
            sigma_hat=math.sqrt(self.v_hat / self.n),
        )


def fit_ate_site(
    data: CausalSiteData,
    target: TargetSample,
    bases: BasisConfig | None = None,
) -> AteSiteFit:
    fits = fit_nuisances(data, target, bases)
    return AteSiteFit(
        theta_hat=dr_estimate(data, target, fits),
        v_hat=influence_variance(data, target, fits),
        n=data.n,
        fits=fits,
    )


def ate_site_summaries(
    sites: Sequence[CausalSiteData],
    target: TargetSample,
    bases: BasisConfig | None = None,
) -> tuple[list[SiteSummary], DissimilarityTable]:
    """Univariate summaries of every site and the local-only dissimilarity table."""
    if len(sites) < 3:
        msg = f"Need at least three sites, got {len(sites)}"
        raise ValueError(msg)
    summaries = [
        fit_ate_site(data, target, bases).summary(site_id)
        for site_id, data in enumerate(sites, start=1)
    ]
    return summaries, local_table(summaries)

