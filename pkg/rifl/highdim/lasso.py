import logging
import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.exceptions import ConvergenceWarning
from sklearn.linear_model import (
    Lasso,
    LassoCV,
    LogisticRegression,
    LogisticRegressionCV,
)
from sklearn.model_selection import KFold

from rifl.errors import ConvergenceError
from rifl.stats_kernel import Family

MIN_SAMPLES = 20


@dataclass(frozen=True)
class HighDimFit:
    mu_tilde: float
    """Unpenalized intercept."""
    theta_tilde: np.ndarray
    """Sparse coefficient vector."""
    lam: float
    """Penalty level used for the final fit, on the average-loss scale."""

    def __post_init__(self):
        theta = np.asarray(self.theta_tilde, dtype=float)
        if not (np.isfinite(self.mu_tilde) and np.all(np.isfinite(theta))):
            msg = "Penalized fit produced non-finite coefficients"
            raise ConvergenceError(msg)
        object.__setattr__(self, "theta_tilde", theta)
        object.__setattr__(self, "mu_tilde", float(self.mu_tilde))

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.theta_tilde)

    def linear_predictor(self, X: np.ndarray) -> np.ndarray:
        return self.mu_tilde + X @ self.theta_tilde


def _logistic_lambda_grid(X: np.ndarray, y: np.ndarray, size: int = 30) -> np.ndarray:
    n = X.shape[0]
    lam_max = np.max(np.abs((X - X.mean(axis=0)).T @ (y - y.mean()))) / n
    lam_max = max(lam_max, 1e-6)
    return np.geomspace(lam_max, lam_max * 1e-2, size)


def lasso_fit(
    X: np.ndarray,
    y: np.ndarray,
    family: Family | str,
    lambda_grid=None,
    folds: int = 5,
    seed: int = 0,
) -> HighDimFit:
    """
    l1-penalized GLM with an unpenalized intercept.

    The linear objective is mean((y - mu - X theta)^2) / 2 + lam * |theta|_1,
    the logistic one is mean(log(1 + e^eta) - y * eta) + lam * |theta|_1.
    With more than one candidate the penalty is chosen by `folds`-fold cross
    validation; a single candidate is used as is.
    """
    family = Family(family)
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, d = X.shape
    if n < MIN_SAMPLES or d < 1:
        msg = f"Penalized fit needs n >= {MIN_SAMPLES} and d >= 1, got n={n}, d={d}"
        raise ValueError(msg)
    grid = None if lambda_grid is None else np.sort(np.atleast_1d(lambda_grid))[::-1]
    cv = KFold(n_splits=folds, shuffle=True, random_state=seed)

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", ConvergenceWarning)
        if family == Family.LINEAR:
            if grid is not None and len(grid) == 1:
                model = Lasso(alpha=grid[0], tol=1e-10, max_iter=100_000)
                model.fit(X, y)
                lam = float(grid[0])
            else:
                model = LassoCV(
                    alphas=grid,
                    n_alphas=50,
                    cv=cv,
                    tol=1e-8,
                    max_iter=100_000,
                )
                model.fit(X, y)
                lam = float(model.alpha_)
            intercept, coef = float(model.intercept_), model.coef_
        else:
            if grid is None:
                grid = _logistic_lambda_grid(X, y)
            cs = 1 / (n * grid)
            if len(grid) == 1:
                model = LogisticRegression(
                    penalty="l1",
                    solver="saga",
                    C=cs[0],
                    tol=1e-8,
                    max_iter=20_000,
                )
                model.fit(X, y)
                lam = float(grid[0])
            else:
                model = LogisticRegressionCV(
                    Cs=cs,
                    penalty="l1",
                    solver="saga",
                    cv=cv,
                    scoring="neg_log_loss",
                    tol=1e-6,
                    max_iter=10_000,
                    random_state=seed,
                )
                model.fit(X, y)
                lam = float(1 / (n * model.C_[0]))
            intercept, coef = float(model.intercept_[0]), model.coef_[0]
    if any(issubclass(w.category, ConvergenceWarning) for w in caught):
        logging.warning(f"Penalized {family} fit reported slow convergence (lam={lam:.4g})")
    return HighDimFit(mu_tilde=intercept, theta_tilde=np.array(coef), lam=lam)
