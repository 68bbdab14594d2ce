"""Site summaries and dissimilarities for low-dimensional parametric models."""

import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from rifl.core import local_dissimilarity
from rifl.errors import DegenerateFunctionalError, DimensionMismatchError
from rifl.stats_kernel import Family, irls_glm_fit
from rifl.structs import DissimilarityTable, SiteSummary, pair_indices
from rifl.utils import StrEnum


@dataclass(frozen=True)
class ParametricSiteFit:
    theta_hat: np.ndarray
    """Covariate coefficients (the intercept is a site-specific nuisance)."""
    c_hat: np.ndarray
    """Asymptotic covariance C, scaled so that sqrt(n) (theta_hat - theta) -> N(0, C)."""
    n: int
    site_id: int = 1
    intercept: float | None = None

    def __post_init__(self):
        theta = np.atleast_1d(np.asarray(self.theta_hat, dtype=float))
        c_hat = np.atleast_2d(np.asarray(self.c_hat, dtype=float))
        if c_hat.shape != (theta.shape[0], theta.shape[0]):
            msg = f"c_hat has shape {c_hat.shape}, expected {2 * (theta.shape[0],)}"
            raise DimensionMismatchError(msg)
        if not np.allclose(c_hat, c_hat.T, rtol=1e-8, atol=1e-12):
            msg = "c_hat must be symmetric"
            raise ValueError(msg)
        if np.min(np.linalg.eigvalsh(c_hat)) < -1e-10 * max(1.0, np.trace(c_hat)):
            msg = "c_hat must be positive semidefinite"
            raise ValueError(msg)
        object.__setattr__(self, "theta_hat", theta)
        object.__setattr__(self, "c_hat", c_hat)

    @property
    def d(self) -> int:
        return self.theta_hat.shape[0]


class FunctionalKind(StrEnum):
    COORDINATE = "coordinate"
    SUBVECTOR = "subvector"
    LINEAR = "linear"
    QUADRATIC_NORM = "quadratic_norm"


@dataclass(frozen=True)
class Functional:
    """A smooth functional g(theta) with its Jacobian.

    Indices are 0-based. `coordinate` uses `index`, `subvector` uses
    `indices`, `linear` uses `vector`.
    """

    kind: FunctionalKind
    index: int | None = None
    indices: tuple[int, ...] | None = None
    vector: np.ndarray | None = None

    @classmethod
    def coordinate(cls, j: int) -> "Functional":
        return cls(FunctionalKind.COORDINATE, index=j)

    @classmethod
    def subvector(cls, indices) -> "Functional":
        return cls(FunctionalKind.SUBVECTOR, indices=tuple(int(i) for i in indices))

    @classmethod
    def linear(cls, x) -> "Functional":
        return cls(FunctionalKind.LINEAR, vector=np.asarray(x, dtype=float))

    @classmethod
    def quadratic_norm(cls) -> "Functional":
        return cls(FunctionalKind.QUADRATIC_NORM)

    def value(self, theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        match self.kind:
            case FunctionalKind.COORDINATE:
                return theta[[self.index]]
            case FunctionalKind.SUBVECTOR:
                return theta[list(self.indices)]
            case FunctionalKind.LINEAR:
                return np.array([self.vector @ theta])
            case FunctionalKind.QUADRATIC_NORM:
                return np.array([theta @ theta])
        msg = f"Unknown functional kind {self.kind}"
        raise ValueError(msg)

    def jacobian(self, theta: np.ndarray) -> np.ndarray:
        """Shape (q, d)."""
        theta = np.asarray(theta, dtype=float)
        d = theta.shape[0]
        match self.kind:
            case FunctionalKind.COORDINATE:
                jac = np.zeros((1, d))
                jac[0, self.index] = 1.0
                return jac
            case FunctionalKind.SUBVECTOR:
                jac = np.zeros((len(self.indices), d))
                jac[np.arange(len(self.indices)), list(self.indices)] = 1.0
                return jac
            case FunctionalKind.LINEAR:
                if self.vector.shape != (d,):
                    msg = f"Linear functional of length {self.vector.shape[0]} on d={d}"
                    raise DimensionMismatchError(msg)
                return self.vector[None, :].copy()
            case FunctionalKind.QUADRATIC_NORM:
                return 2 * theta[None, :]
        msg = f"Unknown functional kind {self.kind}"
        raise ValueError(msg)


def delta_method_summary(fit: ParametricSiteFit, g: Functional) -> SiteSummary:
    beta = g.value(fit.theta_hat)
    jac = g.jacobian(fit.theta_hat)
    if not np.all(np.isfinite(jac)):
        msg = "Functional gradient is not finite"
        raise DegenerateFunctionalError(msg)
    if np.all(jac == 0):
        msg = f"Gradient of the {g.kind} functional vanishes at theta_hat"
        raise DegenerateFunctionalError(msg)
    cov = jac @ fit.c_hat @ jac.T / fit.n
    if beta.shape[0] == 1:
        return SiteSummary(
            site_id=fit.site_id,
            beta_hat=beta,
            n=fit.n,
            sigma_hat=math.sqrt(cov[0, 0]),
        )
    return SiteSummary(
        site_id=fit.site_id,
        beta_hat=beta,
        n=fit.n,
        omega_hat=(cov + cov.T) / 2,
    )


def dissimilarity_lowdim(
    fit_l: ParametricSiteFit,
    fit_k: ParametricSiteFit,
) -> tuple[float, float]:
    """Squared distance between the coefficient vectors, with the standard
    error inflated by 1/min(n_l, n_k) for the degenerate case gamma = 0."""
    if fit_l.d != fit_k.d:
        msg = f"Sites have different dimensions {fit_l.d} and {fit_k.d}"
        raise DimensionMismatchError(msg)
    gamma = fit_l.theta_hat - fit_k.theta_hat
    d_hat = float(gamma @ gamma)
    var = (
        4 * gamma @ fit_l.c_hat @ gamma / fit_l.n
        + 4 * gamma @ fit_k.c_hat @ gamma / fit_k.n
        + 1 / min(fit_l.n, fit_k.n)
    )
    return d_hat, math.sqrt(var)


def fit_site_glm(
    X: np.ndarray,
    y: np.ndarray,
    family: Family | str,
    site_id: int = 1,
) -> ParametricSiteFit:
    """Fit a GLM with a site-specific intercept and keep the covariate block."""
    X = np.asarray(X, dtype=float)
    design = np.column_stack([np.ones(X.shape[0]), X])
    glm = irls_glm_fit(design, y, family)
    return ParametricSiteFit(
        theta_hat=glm.coefficients[1:],
        c_hat=glm.covariance[1:, 1:],
        n=glm.n,
        site_id=site_id,
        intercept=float(glm.coefficients[0]),
    )


def build_lowdim_inputs(
    fits: Sequence[ParametricSiteFit],
    functional: Functional,
) -> tuple[list[SiteSummary], DissimilarityTable]:
    summaries = [delta_method_summary(fit, functional) for fit in fits]
    l_hat, se_l = local_dissimilarity(summaries)
    rows, cols = pair_indices(len(fits))
    globals_ = [
        dissimilarity_lowdim(fits[l], fits[k]) for l, k in zip(rows, cols, strict=True)
    ]
    table = DissimilarityTable(
        n_sites=len(fits),
        l_hat=l_hat,
        se_l=se_l,
        d_hat=np.array([d for d, _ in globals_]),
        se_d=np.array([se for _, se in globals_]),
    )
    return summaries, table
