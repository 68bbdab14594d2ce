import dataclasses
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from rifl.errors import DimensionMismatchError


@dataclass(frozen=True)
class SiteSummary:
    site_id: int
    """1-based site identifier."""
    beta_hat: np.ndarray
    """Estimate of the target functional, shape (q,). q = 1 is the univariate mode."""
    n: int
    """Sample size the estimate was computed from."""
    sigma_hat: float | None = None
    """Standard error of a univariate estimate."""
    omega_hat: np.ndarray | None = None
    """Covariance (not scaled by n) of a multivariate estimate, shape (q, q)."""

    def __post_init__(self):
        beta = np.atleast_1d(np.asarray(self.beta_hat, dtype=float))
        object.__setattr__(self, "beta_hat", beta)
        if beta.ndim != 1 or not np.all(np.isfinite(beta)):
            msg = f"Site {self.site_id}: beta_hat must be a finite vector"
            raise ValueError(msg)
        if self.n < 1:
            msg = f"Site {self.site_id}: sample size must be positive, got {self.n}"
            raise ValueError(msg)
        if beta.shape[0] == 1:
            if self.sigma_hat is None and self.omega_hat is not None:
                object.__setattr__(
                    self,
                    "sigma_hat",
                    float(np.sqrt(np.asarray(self.omega_hat).item())),
                )
                object.__setattr__(self, "omega_hat", None)
            if self.sigma_hat is None or not self.sigma_hat > 0:
                msg = f"Site {self.site_id}: sigma_hat must be positive, got {self.sigma_hat}"
                raise ValueError(msg)
            object.__setattr__(self, "sigma_hat", float(self.sigma_hat))
            return
        if self.omega_hat is None:
            msg = f"Site {self.site_id}: a multivariate summary needs omega_hat"
            raise ValueError(msg)
        omega = np.asarray(self.omega_hat, dtype=float)
        q = beta.shape[0]
        if omega.shape != (q, q):
            msg = f"Site {self.site_id}: omega_hat has shape {omega.shape}, expected ({q}, {q})"
            raise DimensionMismatchError(msg)
        if not np.allclose(omega, omega.T, rtol=1e-10, atol=1e-14):
            msg = f"Site {self.site_id}: omega_hat is not symmetric"
            raise ValueError(msg)
        try:
            np.linalg.cholesky(omega)
        except np.linalg.LinAlgError as e:
            msg = f"Site {self.site_id}: omega_hat is not positive definite"
            raise ValueError(msg) from e
        object.__setattr__(self, "omega_hat", omega)

    @property
    def q(self) -> int:
        return self.beta_hat.shape[0]

    @property
    def is_multivariate(self) -> bool:
        return self.q > 1

    @property
    def point(self) -> float:
        return float(self.beta_hat[0])

    def covariance(self) -> np.ndarray:
        if self.is_multivariate:
            return self.omega_hat
        return np.array([[self.sigma_hat**2]])

    def replace(self, **kwargs) -> "SiteSummary":
        return dataclasses.replace(self, **kwargs)


def check_consistent(summaries: Sequence[SiteSummary]) -> int:
    """Returns the common dimension q of the summaries."""
    if len(summaries) == 0:
        msg = "At least one site summary is required"
        raise ValueError(msg)
    qs = {s.q for s in summaries}
    if len(qs) != 1:
        msg = f"Site summaries have inconsistent dimensions {sorted(qs)}"
        raise DimensionMismatchError(msg)
    return qs.pop()


def pair_indices(n_sites: int) -> tuple[np.ndarray, np.ndarray]:
    """Row and column indices of the pairs (l, k), l < k, in canonical order."""
    return np.triu_indices(n_sites, k=1)


def n_sites_from_pairs(n_pairs: int) -> int:
    n_sites = int(round((1 + np.sqrt(1 + 8 * n_pairs)) / 2))
    if n_sites * (n_sites - 1) // 2 != n_pairs:
        msg = f"{n_pairs} is not a valid number of site pairs"
        raise ValueError(msg)
    return n_sites


@dataclass(frozen=True)
class DissimilarityTable:
    """
    Pairwise dissimilarities stored as vectors over the pairs (l, k), l < k, in
    the order of `pair_indices`. The global part is absent in the univariate
    mode where the test statistic only uses the local dissimilarity.
    """

    n_sites: int
    l_hat: np.ndarray
    se_l: np.ndarray
    d_hat: np.ndarray | None = None
    se_d: np.ndarray | None = None

    def __post_init__(self):
        n_pairs = self.n_sites * (self.n_sites - 1) // 2
        for name in ("l_hat", "se_l", "d_hat", "se_d"):
            value = getattr(self, name)
            if value is None:
                continue
            value = np.asarray(value, dtype=float).reshape(-1)
            if value.shape != (n_pairs,):
                msg = f"{name} has {value.shape[0]} entries, expected {n_pairs} pairs"
                raise DimensionMismatchError(msg)
            if not np.all(np.isfinite(value)):
                msg = f"{name} contains non-finite entries"
                raise ValueError(msg)
            object.__setattr__(self, name, value)
        if (self.d_hat is None) != (self.se_d is None):
            msg = "d_hat and se_d must be given together"
            raise ValueError(msg)
        if np.any(self.se_l <= 0):
            msg = "Standard errors of the local dissimilarities must be positive"
            raise ValueError(msg)
        if self.has_global:
            if np.any(self.se_d <= 0):
                msg = "Standard errors of the global dissimilarities must be positive"
                raise ValueError(msg)
            if np.any(self.d_hat < 0):
                msg = "Global dissimilarities must be nonnegative"
                raise ValueError(msg)

    @property
    def has_global(self) -> bool:
        return self.d_hat is not None

    @property
    def n_pairs(self) -> int:
        return self.l_hat.shape[0]

    def pair_index(self, l: int, k: int) -> int:
        """Position of the 0-based pair (l, k) in the pair vectors."""
        if l == k:
            msg = "A site is not paired with itself"
            raise ValueError(msg)
        l, k = min(l, k), max(l, k)
        return l * self.n_sites - l * (l + 1) // 2 + (k - l - 1)

    def as_matrix(self, values: np.ndarray, diagonal: float = 0.0) -> np.ndarray:
        out = np.full((self.n_sites, self.n_sites), diagonal, dtype=float)
        rows, cols = pair_indices(self.n_sites)
        out[rows, cols] = values
        out[cols, rows] = values
        return out


@dataclass(frozen=True)
class VotingMatrix:
    """Symmetric 0/1 similarity decisions between sites, with unit diagonal."""

    h: np.ndarray

    def __post_init__(self):
        h = np.asarray(self.h).astype(bool)
        if h.ndim != 2 or h.shape[0] != h.shape[1]:
            msg = f"Voting matrix must be square, got shape {h.shape}"
            raise ValueError(msg)
        if not np.array_equal(h, h.T):
            msg = "Voting matrix must be symmetric"
            raise ValueError(msg)
        if not np.all(np.diag(h)):
            msg = "Voting matrix must have a unit diagonal"
            raise ValueError(msg)
        h.setflags(write=False)
        object.__setattr__(self, "h", h)

    @property
    def n_sites(self) -> int:
        return self.h.shape[0]

    def votes(self) -> np.ndarray:
        """Row counts including the diagonal."""
        return self.h.sum(axis=1)

    def adjacency_masks(self) -> list[int]:
        """Neighbour bitsets without the vertex itself."""
        masks = []
        for l in range(self.n_sites):
            mask = 0
            for k in np.flatnonzero(self.h[l]):
                if k != l:
                    mask |= 1 << int(k)
            masks.append(mask)
        return masks

    @classmethod
    def from_edges(cls, n_sites: int, edges) -> "VotingMatrix":
        """Build from 1-based edges such as [(1, 2), (1, 3)]."""
        h = np.eye(n_sites, dtype=bool)
        for l, k in edges:
            h[l - 1, k - 1] = h[k - 1, l - 1] = True
        return cls(h)


@dataclass(frozen=True)
class TuningConfig:
    alpha: float = 0.05
    """Significance level of the final region."""
    nu: float | None = None
    """Probability budget for the resampling step, defaults to alpha / 20."""
    resamples: int = 500
    """Number M of resampled dissimilarity tables."""
    prop: float = 0.10
    """Target fraction of resamples whose maximum clique satisfies the majority rule."""
    majority_fraction: float = 0.5
    """0.5 is the strict majority rule; larger values demand e.g. 80% agreement."""
    rho: float | None = None
    """Fixed shrinkage factor. When set, the tuning search is skipped."""
    rho_grid: tuple[float, ...] | None = None
    """Explicit increasing grid in (0, 1]. Default is the 40-point geometric grid."""

    def __post_init__(self):
        if self.nu is None:
            object.__setattr__(self, "nu", self.alpha / 20)
        if not 0 < self.nu < self.alpha < 1:
            msg = f"Need 0 < nu < alpha < 1, got nu={self.nu}, alpha={self.alpha}"
            raise ValueError(msg)
        if not 0 < self.prop < 1:
            msg = f"prop must lie in (0, 1), got {self.prop}"
            raise ValueError(msg)
        if self.resamples < 1:
            msg = f"At least one resample is required, got {self.resamples}"
            raise ValueError(msg)
        if not 0.5 <= self.majority_fraction < 1:
            msg = f"majority_fraction must lie in [0.5, 1), got {self.majority_fraction}"
            raise ValueError(msg)
        if self.rho is not None and not 0 < self.rho <= 1:
            msg = f"rho must lie in (0, 1], got {self.rho}"
            raise ValueError(msg)
        if self.rho_grid is not None:
            grid = tuple(float(r) for r in self.rho_grid)
            if (
                len(grid) == 0
                or any(b <= a for a, b in zip(grid, grid[1:], strict=False))
                or grid[0] <= 0
                or grid[-1] > 1
            ):
                msg = "rho_grid must be strictly increasing within (0, 1]"
                raise ValueError(msg)
            object.__setattr__(self, "rho_grid", grid)

    @property
    def alpha1(self) -> float:
        """Level used for the per-resample intervals."""
        return self.alpha - self.nu

    def replace(self, **kwargs) -> "TuningConfig":
        return dataclasses.replace(self, **kwargs)


@dataclass(frozen=True)
class ResampleDraw:
    index: int
    l_draw: np.ndarray
    d_draw: np.ndarray | None = None


@dataclass(frozen=True)
class Ellipsoid:
    """{b : (b - center)^T precision (b - center) <= radius}"""

    center: np.ndarray
    precision: np.ndarray
    radius: float

    def contains(self, point) -> bool:
        diff = np.atleast_1d(np.asarray(point, dtype=float)) - self.center
        return bool(diff @ self.precision @ diff <= self.radius)


@dataclass(frozen=True)
class ConfidenceRegion:
    intervals: list[tuple[float, float]] | None
    """Sorted, disjoint segments in the univariate mode."""
    ellipsoids: list[Ellipsoid] | None
    """Distinct confidence ellipsoids in the multivariate mode."""
    retained_count: int
    generalizability: np.ndarray
    """Fraction of retained resamples in which each site is in the majority set."""
    midpoint: float | None
    rho: float
    rule_met: bool
    """False when no grid value reached the requested retention proportion."""
    resamples: int
    retained_sets: dict[tuple[int, ...], int] = field(default_factory=dict)
    """Distinct majority sets (0-based site indices) of retained resamples, with counts."""

    @property
    def is_multivariate(self) -> bool:
        return self.ellipsoids is not None

    def contains(self, point) -> bool:
        if self.is_multivariate:
            return any(e.contains(point) for e in self.ellipsoids)
        x = float(np.asarray(point).reshape(-1)[0])
        return any(lo <= x <= hi for lo, hi in self.intervals)

    @property
    def total_length(self) -> float:
        if self.is_multivariate:
            msg = "Length is only defined for univariate regions"
            raise ValueError(msg)
        return float(sum(hi - lo for lo, hi in self.intervals))

    @property
    def hull(self) -> tuple[float, float]:
        return self.intervals[0][0], self.intervals[-1][1]
