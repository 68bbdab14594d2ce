"""
Numerical primitives shared by the whole package: quantiles, seeded random
streams, small dense linear algebra, IRLS for GLMs and a damped Newton solver.
"""

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.special
import scipy.stats

from rifl.errors import (
    ConvergenceError,
    DomainError,
    NumericError,
    SeparationError,
    SingularDesignError,
)
from rifl.utils import StrEnum

STREAM_BLOCK = 1 << 20
"""Every replication owns the stream ids [r * STREAM_BLOCK, (r + 1) * STREAM_BLOCK)."""
RESAMPLE_OFFSET = 0
BOOTSTRAP_OFFSET = 1 << 18
DATA_OFFSET = 1 << 19
SITE_OFFSET = (1 << 19) + 1

_MASK64 = (1 << 64) - 1


def normal_quantile(p: float) -> float:
    """Upper quantile: the z with P(N(0,1) >= z) = p."""
    if not 0.0 < p < 1.0:
        msg = f"normal_quantile needs 0 < p < 1, got {p}"
        raise DomainError(msg)
    z = float(scipy.stats.norm.isf(p))
    if not math.isfinite(z):
        msg = f"normal_quantile({p}) is not finite"
        raise NumericError(msg)
    return z


def chisq_quantile(p: float, df: int, noncentrality: float = 0.0) -> float:
    """Upper quantile of a (possibly noncentral) chi-square distribution."""
    if not 0.0 < p < 1.0:
        msg = f"chisq_quantile needs 0 < p < 1, got {p}"
        raise DomainError(msg)
    if df < 1:
        msg = f"Degrees of freedom must be >= 1, got {df}"
        raise DomainError(msg)
    if noncentrality < 0:
        msg = f"Noncentrality must be nonnegative, got {noncentrality}"
        raise DomainError(msg)
    if noncentrality == 0:
        c = float(scipy.stats.chi2.isf(p, df))
    else:
        c = float(scipy.stats.ncx2.isf(p, df, noncentrality))
    if not math.isfinite(c) or c < 0:
        msg = f"chisq_quantile did not converge for p={p}, df={df}, ncp={noncentrality}"
        raise NumericError(msg)
    return c


@dataclass(frozen=True)
class RandomStream:
    """A counter-based random stream. The pair (seed, stream_id) is the
    Philox key, so equal pairs give bit-identical draws and distinct ids give
    independent sequences regardless of the order streams are consumed in."""

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        if self.stream_id < 0:
            msg = f"stream_id must be nonnegative, got {self.stream_id}"
            raise ValueError(msg)

    def generator(self) -> np.random.Generator:
        key = ((self.seed & _MASK64) << 64) | (self.stream_id & _MASK64)
        return np.random.Generator(np.random.Philox(key=key))

    def substream(self, offset: int) -> "RandomStream":
        return RandomStream(self.seed, self.stream_id + offset)

    @classmethod
    def for_replication(cls, seed: int, replication: int) -> "RandomStream":
        return cls(seed, replication * STREAM_BLOCK)

    def site_stream(self, site_index: int) -> "RandomStream":
        return self.substream(SITE_OFFSET + site_index)

    def seed_int(self) -> int:
        """A 31-bit integer drawn from this stream, for libraries wanting an int seed."""
        return int(self.generator().integers(0, 2**31 - 1))


class Family(StrEnum):
    LINEAR = "linear"
    LOGISTIC = "logistic"

    def mean(self, eta: np.ndarray) -> np.ndarray:
        if self == Family.LOGISTIC:
            return scipy.special.expit(eta)
        return eta

    def mean_derivative(self, eta: np.ndarray) -> np.ndarray:
        if self == Family.LOGISTIC:
            p = scipy.special.expit(eta)
            return p * (1 - p)
        return np.ones_like(eta)

    def neg_loglik(self, y: np.ndarray, eta: np.ndarray, weights: np.ndarray) -> float:
        if self == Family.LOGISTIC:
            return float(np.sum(weights * (np.logaddexp(0.0, eta) - y * eta)))
        return float(0.5 * np.sum(weights * (y - eta) ** 2))


@dataclass(frozen=True)
class GlmFit:
    coefficients: np.ndarray
    covariance: np.ndarray
    """Asymptotic covariance C scaled so that n * Var(coefficients) -> C."""
    n: int
    family: Family
    iterations: int
    dispersion: float = 1.0

    @property
    def variance(self) -> np.ndarray:
        """Finite-sample covariance of the coefficients, C / n."""
        return self.covariance / self.n


def is_positive_definite(a: np.ndarray) -> bool:
    try:
        np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        return False
    return True


def psd_inverse(a: np.ndarray) -> np.ndarray:
    """Inverse of a symmetric matrix via Cholesky, adding a ridge of
    1e-8 * trace / dim when the factorization fails."""
    a = np.asarray(a, dtype=float)
    dim = a.shape[0]
    identity = np.eye(dim)
    try:
        factor = scipy.linalg.cho_factor(a)
    except np.linalg.LinAlgError:
        ridge = 1e-8 * np.trace(np.abs(a)) / dim
        logging.debug(f"Cholesky failed, retrying with ridge {ridge:.3g}")
        try:
            factor = scipy.linalg.cho_factor(a + ridge * identity)
        except np.linalg.LinAlgError as e:
            msg = "Matrix is singular even after ridge regularization"
            raise SingularDesignError(msg) from e
    return scipy.linalg.cho_solve(factor, identity)


def ar1_covariance(d: int, rho: float) -> np.ndarray:
    idx = np.arange(d)
    return rho ** np.abs(idx[:, None] - idx[None, :])


def irls_glm_fit(
    X: np.ndarray,
    y: np.ndarray,
    family: Family | str,
    weights: np.ndarray | None = None,
    max_iter: int = 100,
    tol: float = 1e-8,
    separation_norm: float = 1e3,
) -> GlmFit:
    """
    Maximum likelihood for a linear or logistic GLM by iteratively reweighted
    least squares with step halving.

    Convergence is declared when the sup-norm of the average score is below
    `tol`. The returned covariance is the inverse average observed information
    (times the residual variance for the linear family), i.e. the sqrt(n)-scaled
    form.
    """
    family = Family(family)
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    if y.shape != (n,):
        msg = f"Response has shape {y.shape}, expected ({n},)"
        raise ValueError(msg)
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    if family == Family.LOGISTIC and not np.all((y == 0) | (y == 1)):
        msg = "Logistic responses must be 0 or 1"
        raise ValueError(msg)
    if np.linalg.matrix_rank(X * np.sqrt(w)[:, None]) < p:
        msg = f"Design with {p} columns is rank deficient"
        raise SingularDesignError(msg)

    wsum = float(np.sum(w))
    theta = np.zeros(p)
    eta = X @ theta
    objective = family.neg_loglik(y, eta, w)
    iterations = 0
    for iterations in range(1, max_iter + 1):
        mu = family.mean(eta)
        score = X.T @ (w * (y - mu)) / wsum
        if np.max(np.abs(score)) <= tol:
            break
        info = (X * (w * family.mean_derivative(eta))[:, None]).T @ X / wsum
        try:
            step = scipy.linalg.solve(info, score, assume_a="pos")
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as e:
            msg = "Working information matrix is singular"
            raise SingularDesignError(msg) from e
        scale = 1.0
        for _ in range(30):
            candidate = theta + scale * step
            cand_eta = X @ candidate
            cand_objective = family.neg_loglik(y, cand_eta, w)
            if cand_objective <= objective + 1e-12 * abs(objective):
                break
            scale /= 2
        theta, eta, objective = candidate, cand_eta, cand_objective
        if np.linalg.norm(theta) > separation_norm:
            msg = f"Coefficient norm exceeded {separation_norm:g}, data look separable"
            raise SeparationError(msg)
    else:
        msg = f"IRLS did not converge in {max_iter} iterations"
        raise ConvergenceError(msg)
    if (
        family == Family.LOGISTIC
        and np.max(np.abs(eta)) > 30
        and np.all((eta > 0) == (y == 1))
    ):
        msg = "Fitted probabilities are 0 or 1 and classify every point, data are separable"
        raise SeparationError(msg)

    info = (X * (w * family.mean_derivative(eta))[:, None]).T @ X / wsum
    dispersion = 1.0
    if family == Family.LINEAR:
        dof = max(n - p, 1)
        dispersion = float(np.sum(w * (y - eta) ** 2) / dof)
    cov = psd_inverse(info) * dispersion
    cov = (cov + cov.T) / 2
    return GlmFit(
        coefficients=theta,
        covariance=cov,
        n=n,
        family=family,
        iterations=iterations,
        dispersion=dispersion,
    )


def newton_solve(
    residual_fn: Callable[[np.ndarray], np.ndarray],
    jacobian_fn: Callable[[np.ndarray], np.ndarray],
    init: np.ndarray,
    tol: float = 1e-9,
    max_iter: int = 100,
) -> np.ndarray:
    """Damped Newton iteration for residual_fn(x) = 0. The step is halved
    while it fails to reduce the sup-norm of the residual."""
    x = np.asarray(init, dtype=float).copy()
    r = np.asarray(residual_fn(x), dtype=float)
    if not np.all(np.isfinite(r)):
        msg = "Residual is not finite at the initial point"
        raise NumericError(msg)
    norm = np.max(np.abs(r))
    for _ in range(max_iter):
        if norm <= tol:
            return x
        jac = np.atleast_2d(np.asarray(jacobian_fn(x), dtype=float))
        try:
            step = -np.linalg.solve(jac, r)
        except np.linalg.LinAlgError as e:
            msg = "Jacobian is singular"
            raise SingularDesignError(msg) from e
        scale = 1.0
        for _ in range(40):
            candidate = x + scale * step
            cand_r = np.asarray(residual_fn(candidate), dtype=float)
            cand_norm = np.max(np.abs(cand_r)) if np.all(np.isfinite(cand_r)) else np.inf
            if cand_norm < norm:
                break
            scale /= 2
        else:
            msg = "Newton line search failed to reduce the residual"
            raise ConvergenceError(msg)
        x, r, norm = candidate, cand_r, cand_norm
    if norm <= tol:
        return x
    msg = f"Newton solver did not converge in {max_iter} iterations (residual {norm:.3g})"
    raise ConvergenceError(msg)
