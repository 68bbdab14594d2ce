"""
Data generating processes for the three applications.

Sites are 1-based in the descriptions below. The first `majority_size` sites
share the prevailing parameter; the remaining sites receive the listed
perturbations in order, cycling when there are more than listed.
"""

import dataclasses
import functools
from dataclasses import dataclass

import numpy as np
import scipy.special

from rifl.causal import BasisConfig, CausalSiteData, TargetSample
from rifl.stats_kernel import RandomStream, ar1_covariance
from rifl.utils import StrEnum

AR_CORRELATION = 0.6
SITE_INTERCEPTS = (0.05, -0.05, 0.1, -0.1, 0.05, -0.05, 0.1, -0.1, 0.0, 0.0)
LOWDIM_THETA = (0.5, 0.5, 0.5, 0.5, 0.5, 0.1, 0.1, 0.1, 0.0, 0.0)
HIGHDIM_SHIFTED_SITES = (1, 2, 3, 7, 9)
HIGHDIM_INTERCEPT = 0.05
ATE_SHIFTED_SITES = (4, 5, 6, 8, 10)
ATE_COVARIATE_SHIFT = 0.5
ATE_EFFECT = -1.0
PROPENSITY_COEFFICIENTS = (0.5, -0.5, 0.1)
"""Main effects of X1, X2 and their interaction."""
TARGET_SIZE = 10_000


class ScenarioKind(StrEnum):
    LOWDIM = "lowdim"
    HIGHDIM = "highdim"
    ATE = "ate"


_DEFAULT_DIMENSION = {ScenarioKind.LOWDIM: 10, ScenarioKind.HIGHDIM: 200, ScenarioKind.ATE: 10}
_DEFAULT_COORDINATE = {ScenarioKind.LOWDIM: 1, ScenarioKind.HIGHDIM: 11, ScenarioKind.ATE: 1}
_DEFAULT_REPLICATIONS = {
    ScenarioKind.LOWDIM: 500,
    ScenarioKind.HIGHDIM: 100,
    ScenarioKind.ATE: 500,
}


@dataclass(frozen=True)
class Scenario:
    kind: ScenarioKind
    n_sites: int = 10
    majority_size: int = 6
    n: int = 1000
    """Sample size of every site."""
    d: int | None = None
    """Covariate dimension. Defaults to 10 (lowdim, ate) or 200 (highdim)."""
    separation: float = 1.0
    """The separation level a. 0 makes every site share the prevailing parameter."""
    replications: int | None = None
    """Defaults to 500 (lowdim, ate) or 100 (highdim)."""
    seed: int = 0
    coordinate: int | None = None
    """1-based coordinate of theta that is the inference target (prediction kinds)."""
    target_size: int = TARGET_SIZE
    """Size of the target covariate sample (ate)."""

    def __post_init__(self):
        object.__setattr__(self, "kind", ScenarioKind(self.kind))
        if self.d is None:
            object.__setattr__(self, "d", _DEFAULT_DIMENSION[self.kind])
        if self.coordinate is None:
            object.__setattr__(self, "coordinate", _DEFAULT_COORDINATE[self.kind])
        if self.replications is None:
            object.__setattr__(self, "replications", _DEFAULT_REPLICATIONS[self.kind])
        if self.n_sites < 3:
            msg = f"Need at least three sites, got {self.n_sites}"
            raise ValueError(msg)
        if not self.n_sites / 2 < self.majority_size <= self.n_sites:
            msg = (
                f"majority_size must exceed half of {self.n_sites} sites, "
                f"got {self.majority_size}"
            )
            raise ValueError(msg)
        if self.separation < 0:
            msg = f"Separation must be nonnegative, got {self.separation}"
            raise ValueError(msg)
        if self.n < 20:
            msg = f"Sites need at least 20 observations, got {self.n}"
            raise ValueError(msg)
        if self.replications < 1:
            msg = f"Need at least one replication, got {self.replications}"
            raise ValueError(msg)
        min_d = 11 if self.kind == ScenarioKind.HIGHDIM else 2
        if self.d < min_d:
            msg = f"{self.kind} scenarios need d >= {min_d}, got {self.d}"
            raise ValueError(msg)
        if not 1 <= self.coordinate <= self.d:
            msg = f"Coordinate must lie in 1..{self.d}, got {self.coordinate}"
            raise ValueError(msg)

    @property
    def true_set(self) -> tuple[int, ...]:
        """0-based indices of the prevailing sites."""
        return tuple(range(self.majority_size))

    def describe(self) -> dict:
        return {
            k: (str(v) if isinstance(v, StrEnum) else v)
            for k, v in dataclasses.asdict(self).items()
        }

    def replace(self, **kwargs) -> "Scenario":
        return dataclasses.replace(self, **kwargs)


@dataclass(frozen=True)
class SiteData:
    X: np.ndarray
    y: np.ndarray

    @property
    def n(self) -> int:
        return self.X.shape[0]


@dataclass(frozen=True)
class GeneratedData:
    sites: list
    """`SiteData` for the prediction kinds, `CausalSiteData` for ate."""
    truth: float
    """The prevailing value of the inference target."""
    site_targets: np.ndarray
    """True value of the target at each site."""
    site_thetas: np.ndarray | None = None
    """True coefficient vectors (prediction kinds), shape (L, d)."""
    target: TargetSample | None = None


@functools.lru_cache(maxsize=16)
def _ar1_factor(d: int, scale: float) -> np.ndarray:
    return np.linalg.cholesky(scale * ar1_covariance(d, AR_CORRELATION))


def _gaussian(gen: np.random.Generator, n: int, d: int, scale: float = 1.0, mean=0.0):
    return mean + gen.standard_normal((n, d)) @ _ar1_factor(d, scale).T


def _cycled(values, index: int):
    return values[index % len(values)]


def _pad(values, d: int) -> np.ndarray:
    out = np.zeros(d)
    k = min(d, len(values))
    out[:k] = values[:k]
    return out


def lowdim_thetas(scenario: Scenario) -> np.ndarray:
    a = scenario.separation
    base = _pad(LOWDIM_THETA, scenario.d)
    if scenario.majority_size >= 8:
        leading = (0.5 - 0.3 * a, 0.5 - 0.1 * a)
    else:
        leading = (0.5 - 0.3 * a, 0.5 - 0.2 * a, 0.5 - 0.1 * a, 0.5 + 0.1 * a)
    thetas = np.tile(base, (scenario.n_sites, 1))
    for i, l in enumerate(range(scenario.majority_size, scenario.n_sites)):
        thetas[l, : min(5, scenario.d)] = _cycled(leading, i)
    return thetas


def gen_lowdim(scenario: Scenario, stream: RandomStream) -> GeneratedData:
    """Logistic outcomes with AR(1) covariates."""
    gen = stream.generator()
    thetas = lowdim_thetas(scenario)
    sites = []
    for l in range(scenario.n_sites):
        X = _gaussian(gen, scenario.n, scenario.d)
        eta = _cycled(SITE_INTERCEPTS, l) + X @ thetas[l]
        y = (gen.random(scenario.n) < scipy.special.expit(eta)).astype(float)
        sites.append(SiteData(X, y))
    j = scenario.coordinate - 1
    return GeneratedData(
        sites=sites,
        truth=float(thetas[0, j]),
        site_targets=thetas[:, j].copy(),
        site_thetas=thetas,
    )


def highdim_thetas(scenario: Scenario) -> np.ndarray:
    a = scenario.separation
    j = np.arange(1, scenario.d + 1)
    base = np.where(j <= 11, 0.1 * j - 0.6, 0.0)
    if scenario.majority_size >= 8:
        shifts = (0.2 + 0.05 * a, 0.15 + 0.05 * a)
    else:
        shifts = (0.2 + 0.05 * a, 0.2 + 0.05 * a, 0.15 + 0.05 * a, 0.15 + 0.05 * a)
    thetas = np.tile(base, (scenario.n_sites, 1))
    for i, l in enumerate(range(scenario.majority_size, scenario.n_sites)):
        thetas[l, 5:11] += _cycled(shifts, i)
    return thetas


def gen_highdim(scenario: Scenario, stream: RandomStream) -> GeneratedData:
    """Linear outcomes with N(0, 1) noise and covariance half the AR(1) matrix."""
    gen = stream.generator()
    thetas = highdim_thetas(scenario)
    sites = []
    for l in range(scenario.n_sites):
        X = _gaussian(gen, scenario.n, scenario.d, scale=0.5)
        mu = HIGHDIM_INTERCEPT if (l % 10) + 1 in HIGHDIM_SHIFTED_SITES else 0.0
        y = mu + X @ thetas[l] + gen.standard_normal(scenario.n)
        sites.append(SiteData(X, y))
    j = scenario.coordinate - 1
    return GeneratedData(
        sites=sites,
        truth=float(thetas[0, j]),
        site_targets=thetas[:, j].copy(),
        site_thetas=thetas,
    )


def ate_effects(scenario: Scenario) -> np.ndarray:
    a = scenario.separation
    if scenario.majority_size >= 8:
        shifted = (ATE_EFFECT - 0.2 * a, ATE_EFFECT - 0.1 * a)
    else:
        shifted = (
            ATE_EFFECT - 0.2 * a,
            ATE_EFFECT - 0.2 * a,
            ATE_EFFECT - 0.1 * a,
            ATE_EFFECT - 0.1 * a,
        )
    effects = np.full(scenario.n_sites, ATE_EFFECT)
    for i, l in enumerate(range(scenario.majority_size, scenario.n_sites)):
        effects[l] = _cycled(shifted, i)
    return effects


def ate_bases() -> BasisConfig:
    """Propensity deliberately misspecified: main effects of X1 and X2 only."""
    return BasisConfig(propensity=(0, 1))


def gen_ate(scenario: Scenario, stream: RandomStream) -> GeneratedData:
    """
    Confounded treatment with a constant effect, covariate mean shift at some
    sites, and a target population with mean zero. The outcome model is linear
    so every site's target ATE equals its treatment coefficient.
    """
    gen = stream.generator()
    d = scenario.d
    zeta = _pad(LOWDIM_THETA, d)
    effects = ate_effects(scenario)
    shift = np.zeros(d)
    shift[:2] = ATE_COVARIATE_SHIFT
    a1, a2, a12 = PROPENSITY_COEFFICIENTS
    sites = []
    for l in range(scenario.n_sites):
        mean = shift if (l % 10) + 1 in ATE_SHIFTED_SITES else 0.0
        X = _gaussian(gen, scenario.n, d, mean=mean)
        logit = a1 * X[:, 0] + a2 * X[:, 1] + a12 * X[:, 0] * X[:, 1]
        A = (gen.random(scenario.n) < scipy.special.expit(logit)).astype(float)
        Y = (
            _cycled(SITE_INTERCEPTS, l)
            + X @ zeta
            + effects[l] * A
            + gen.standard_normal(scenario.n)
        )
        sites.append(CausalSiteData(X, A, Y))
    target = TargetSample(_gaussian(gen, scenario.target_size, d))
    return GeneratedData(
        sites=sites,
        truth=ATE_EFFECT,
        site_targets=effects,
        target=target,
    )


def generate(scenario: Scenario, stream: RandomStream) -> GeneratedData:
    match scenario.kind:
        case ScenarioKind.LOWDIM:
            return gen_lowdim(scenario, stream)
        case ScenarioKind.HIGHDIM:
            return gen_highdim(scenario, stream)
        case ScenarioKind.ATE:
            return gen_ate(scenario, stream)
    msg = f"Unknown scenario kind {scenario.kind}"
    raise ValueError(msg)


def example_one_scenario(**kwargs) -> Scenario:
    """Causal setting where sites 7 to 10 have target effects -1.2, -1.2, -1.1, -1.1."""
    params = dict(kind=ScenarioKind.ATE, n=1000, separation=1.0, majority_size=6)
    params.update(kwargs)
    return Scenario(**params)
