"""
Projection directions for debiasing.

For a loading gamma the direction solves

    min  u^T S u
    s.t. |S u - gamma|_inf        <= |gamma|_2 lam
         |gamma^T S u - |gamma|^2| <= |gamma|_2^2 lam
         max_i |u^T x_i|           <= |gamma|_2^2 tau

Write b = gamma / |gamma|_2, u = |gamma|_2 v and H = [b, I]. The first two
constraints become |H^T S v - H^T b|_inf <= lam and the third becomes
max_i |v^T x_i| <= |gamma|_2 tau. The dual of the first two is the
l1-penalized quadratic

    min_w  w^T (H^T S H) w / 4 + b^T H w + lam |w|_1,   v = -H w / 2,

solved here by cyclic coordinate descent with an active-set pass. The third
constraint is checked afterwards. When it fails, or the dual diverges because
the first two are infeasible, lam is relaxed geometrically and tau stays fixed.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from rifl.errors import InfeasibleProjectionError

DIVERGENCE_NORM = 1e12


@dataclass(frozen=True)
class ProjectionDirection:
    u: np.ndarray
    lam: float
    """Penalty level at which a feasible direction was found."""
    tau: float
    duality_gap: float
    sweeps: int


def _soft_threshold(x: float, t: float) -> float:
    if x > t:
        return x - t
    if x < -t:
        return x + t
    return 0.0


def _kkt_violation(grad: np.ndarray, w: np.ndarray, lam: float) -> float:
    active = w != 0
    viol = np.maximum(np.abs(grad) - lam, 0.0)
    viol[active] = np.abs(grad[active] + lam * np.sign(w[active]))
    return float(np.max(viol))


def _sweep(q_mat, c, lam, w, half_qw, coords) -> float:
    max_change = 0.0
    for j in coords:
        dj = 0.5 * q_mat[j, j]
        if dj <= 0:
            continue
        old = w[j]
        partial = half_qw[j] - dj * old + c[j]
        new = -_soft_threshold(partial, lam) / dj
        if new != old:
            half_qw += 0.5 * q_mat[:, j] * (new - old)
            w[j] = new
            max_change = max(max_change, abs(new - old))
    return max_change


def solve_dual(
    q_mat: np.ndarray,
    c: np.ndarray,
    lam: float,
    w0: np.ndarray,
    tol: float = 1e-8,
    max_sweeps: int = 5000,
) -> tuple[np.ndarray | None, int]:
    """Coordinate descent for min w^T Q w / 4 + c^T w + lam |w|_1.

    Returns (w, sweeps), with w = None when the iterates diverge or do not
    reach the KKT tolerance.
    """
    w = w0.astype(float).copy()
    half_qw = 0.5 * q_mat @ w
    all_coords = range(len(w))
    sweeps = 0
    while sweeps < max_sweeps:
        _sweep(q_mat, c, lam, w, half_qw, all_coords)
        sweeps += 1
        active = np.flatnonzero(w)
        while sweeps < max_sweeps:
            change = _sweep(q_mat, c, lam, w, half_qw, active)
            sweeps += 1
            scale = float(np.max(np.abs(w), initial=0.0))
            if scale > DIVERGENCE_NORM:
                return None, sweeps
            if change <= tol * max(1.0, scale):
                break
        if not np.all(np.isfinite(w)) or np.max(np.abs(w)) > DIVERGENCE_NORM:
            return None, sweeps
        half_qw = 0.5 * q_mat @ w
        if _kkt_violation(half_qw + c, w, lam) <= tol * max(1.0, lam):
            return w, sweeps
    return None, sweeps


def constraint_violation(
    u: np.ndarray,
    sigma_hat: np.ndarray,
    gamma: np.ndarray,
    x_rows: np.ndarray,
    lam: float,
    tau: float,
) -> float:
    """Largest amount by which u breaks any of the three constraints (0 if feasible)."""
    norm = float(np.linalg.norm(gamma))
    su = sigma_hat @ u
    return max(
        float(np.max(np.abs(su - gamma))) - norm * lam,
        abs(float(gamma @ su) - norm**2) - norm**2 * lam,
        float(np.max(np.abs(x_rows @ u))) - norm**2 * tau,
        0.0,
    )


def projection_direction(
    sigma_hat: np.ndarray,
    gamma: np.ndarray,
    x_rows: np.ndarray,
    lam: float,
    tau: float,
    relax_factor: float = 1.5,
    max_relaxations: int = 5,
) -> ProjectionDirection:
    gamma = np.asarray(gamma, dtype=float)
    norm = float(np.linalg.norm(gamma))
    if norm == 0:
        msg = "Projection direction is undefined for a zero loading"
        raise ValueError(msg)
    b = gamma / norm
    p = b.shape[0]
    h_mat = np.column_stack([b, np.eye(p)])
    q_mat = h_mat.T @ sigma_hat @ h_mat
    c = h_mat.T @ b
    # u = gamma corresponds to w = (-2, 0, ..., 0)
    w0 = np.zeros(p + 1)
    w0[0] = -2.0

    cur_lam = lam
    for attempt in range(max_relaxations + 1):
        if attempt > 0:
            cur_lam *= relax_factor
            logging.debug(f"Relaxing projection penalty to lam={cur_lam:.4g}")
        w, sweeps = solve_dual(q_mat, c, cur_lam, w0)
        if w is None:
            continue
        v = -0.5 * (h_mat @ w)
        if np.max(np.abs(x_rows @ v)) > norm * tau * (1 + 1e-9):
            w0 = w
            continue
        gap = abs(0.5 * w @ q_mat @ w + c @ w + cur_lam * np.sum(np.abs(w)))
        return ProjectionDirection(
            u=norm * v,
            lam=cur_lam,
            tau=tau,
            duality_gap=norm**2 * gap,
            sweeps=sweeps,
        )
    msg = (
        f"No feasible projection direction after {max_relaxations} relaxations "
        f"(final lam={cur_lam:.4g})"
    )
    raise InfeasibleProjectionError(msg, lam=cur_lam)


def default_penalty(d: int, n2: int, kappa: float = 1.1) -> float:
    return kappa * math.sqrt(math.log(max(d, 2)) / n2)


def default_tau(n2: int) -> float:
    return math.sqrt(2 * math.log(n2))
