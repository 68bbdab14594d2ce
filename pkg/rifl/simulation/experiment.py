"""
Replication driver for the simulation studies.

Replication r draws everything from `RandomStream.for_replication(seed, r)`,
so results do not depend on the number of workers or on which replications
came from the cache.
"""

import dataclasses
import logging
import math
import time
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field

import humanize
import numpy as np
from tqdm import tqdm

from rifl import env
from rifl.baselines import (
    BaselineMethod,
    BaselineResult,
    ese_ratio,
    median_ci,
    mnb_ci,
    mv_ci,
    oba_ci,
    vmc_ci,
    vmc_point,
)
from rifl.causal import CausalSiteData, ate_site_summaries
from rifl.core import (
    min_resample_discrepancy,
    oracle_ci,
    resample_dissimilarities,
    rifl_confidence_region,
    sampling_accuracy,
)
from rifl.errors import (
    EmptySetError,
    InvalidExperimentError,
    MajorityRuleUnverifiableError,
    NumericError,
)
from rifl.highdim.dissimilarity import (
    HighDimConfig,
    build_from_states,
    highdim_site_round1,
)
from rifl.lowdim import Functional, build_lowdim_inputs, fit_site_glm
from rifl.simulation.scenarios import (
    GeneratedData,
    Scenario,
    ScenarioKind,
    ate_bases,
    generate,
)
from rifl.sqlcache import ReplicationCache, replication_key
from rifl.stats_kernel import (
    BOOTSTRAP_OFFSET,
    DATA_OFFSET,
    Family,
    RandomStream,
)
from rifl.structs import (
    DissimilarityTable,
    SiteSummary,
    TuningConfig,
    pair_indices,
)
from rifl.utils import flatten_dict

SCHEMA_VERSION = 1
FRACTION_RULE = 0.8
_REPLICATION_ERRORS = (NumericError, MajorityRuleUnverifiableError, EmptySetError)


def _default_methods() -> tuple[BaselineMethod, ...]:
    return (
        BaselineMethod.RIFL,
        BaselineMethod.VMC,
        BaselineMethod.MEDIAN,
        BaselineMethod.OBA,
        BaselineMethod.ORACLE,
    )


@dataclass(frozen=True)
class ExperimentConfig:
    methods: tuple[BaselineMethod, ...] = field(default_factory=_default_methods)
    tuning: TuningConfig = field(default_factory=TuningConfig)
    highdim: HighDimConfig = field(default_factory=HighDimConfig)
    median_resamples: int = 500
    mnb_resamples: int = 500
    upsilon: float = 0.8
    """Subsample size exponent of the m-out-of-n bootstrap."""
    max_failure_rate: float = 0.02
    """Share of failed replications above which the experiment is invalid."""

    def __post_init__(self):
        methods = tuple(BaselineMethod(m) for m in self.methods)
        if not methods:
            msg = "At least one method is required"
            raise ValueError(msg)
        if len(set(methods)) != len(methods):
            msg = f"Duplicate methods in {[str(m) for m in methods]}"
            raise ValueError(msg)
        if self.mnb_resamples >= BOOTSTRAP_OFFSET - 1:
            msg = f"mnb_resamples must be below {BOOTSTRAP_OFFSET - 1}"
            raise ValueError(msg)
        object.__setattr__(self, "methods", methods)

    def describe(self) -> dict:
        out = dataclasses.asdict(self)
        out["methods"] = [str(m) for m in self.methods]
        return out

    def replace(self, **kwargs) -> "ExperimentConfig":
        return dataclasses.replace(self, **kwargs)


@dataclass(frozen=True)
class MethodSummary:
    method: BaselineMethod
    coverage: float
    mc_se: float
    """Binomial Monte-Carlo standard error of the coverage."""
    avg_length: float
    replications: int


@dataclass
class ExperimentReport:
    scenario: Scenario
    config: ExperimentConfig
    summaries: list[MethodSummary]
    records: list[dict]
    failed: int
    runtime_seconds: float
    """Wall time. Never written to report files."""

    @property
    def valid(self) -> bool:
        return self.failed <= self.config.max_failure_rate * self.scenario.replications

    def raise_if_invalid(self):
        if not self.valid:
            msg = (
                f"{self.failed} of {self.scenario.replications} replications failed, "
                f"above the {self.config.max_failure_rate:.0%} cap"
            )
            raise InvalidExperimentError(msg)

    def summary_for(self, method: BaselineMethod | str) -> MethodSummary:
        method = BaselineMethod(method)
        for s in self.summaries:
            if s.method == method:
                return s
        msg = f"No results for method {method}"
        raise KeyError(msg)

    def flat_records(self) -> list[dict]:
        return [flatten_dict(r) for r in self.records]


def site_inputs(
    scenario: Scenario,
    data: GeneratedData,
    stream: RandomStream,
    highdim: HighDimConfig | None = None,
) -> tuple[list[SiteSummary], DissimilarityTable]:
    """Build the site summaries and the dissimilarity table in process."""
    match scenario.kind:
        case ScenarioKind.LOWDIM:
            fits = [
                fit_site_glm(site.X, site.y, Family.LOGISTIC, site_id=l + 1)
                for l, site in enumerate(data.sites)
            ]
            return build_lowdim_inputs(fits, Functional.coordinate(scenario.coordinate - 1))
        case ScenarioKind.HIGHDIM:
            states = [
                highdim_site_round1(
                    site.X,
                    site.y,
                    Family.LINEAR,
                    site_id=l + 1,
                    coordinate=scenario.coordinate,
                    stream=stream.site_stream(l),
                    config=highdim,
                )
                for l, site in enumerate(data.sites)
            ]
            return build_from_states(states, highdim)
        case ScenarioKind.ATE:
            return ate_site_summaries(data.sites, data.target, ate_bases())
    msg = f"Unknown scenario kind {scenario.kind}"
    raise ValueError(msg)


def _subsample(site, rows: np.ndarray):
    if isinstance(site, CausalSiteData):
        return CausalSiteData(site.X[rows], site.A[rows], site.Y[rows])
    return dataclasses.replace(site, X=site.X[rows], y=site.y[rows])


def _mnb_estimator(scenario: Scenario, data: GeneratedData):
    if scenario.kind == ScenarioKind.HIGHDIM:
        msg = "The m-out-of-n bootstrap is not available for high-dimensional scenarios"
        raise ValueError(msg)

    def estimate(indices: list[np.ndarray]) -> float:
        sites = [_subsample(s, rows) for s, rows in zip(data.sites, indices, strict=True)]
        resampled = dataclasses.replace(data, sites=sites)
        summaries, table = site_inputs(scenario, resampled, RandomStream(0))
        return vmc_point(summaries, table)[0]

    return estimate


def _result_record(result: BaselineResult, truth: float) -> dict:
    return {
        "covered": result.contains(truth),
        "length": result.length,
        "lo": result.interval[0],
        "hi": result.interval[1],
        "point": result.point,
    }


def run_replication(scenario: Scenario, config: ExperimentConfig, replication: int) -> dict:
    stream = RandomStream.for_replication(scenario.seed, replication)
    data = generate(scenario, stream.substream(DATA_OFFSET))
    summaries, table = site_inputs(scenario, data, stream, config.highdim)
    alpha = config.tuning.alpha
    truth = data.truth
    methods: dict[str, dict] = {}
    record: dict = {"replication": replication, "status": "ok", "methods": methods}

    for method in config.methods:
        match method:
            case BaselineMethod.RIFL | BaselineMethod.RIFL_FRACTION:
                tuning = config.tuning
                if method == BaselineMethod.RIFL_FRACTION:
                    tuning = tuning.replace(majority_fraction=FRACTION_RULE)
                region = rifl_confidence_region(summaries, table, tuning, stream)
                lo, hi = region.hull
                methods[str(method)] = {
                    "covered": region.contains(truth),
                    "length": region.total_length,
                    "lo": lo,
                    "hi": hi,
                    "point": region.midpoint,
                    "segments": [list(seg) for seg in region.intervals],
                    "rho": region.rho,
                    "rule_met": region.rule_met,
                    "retained_count": region.retained_count,
                    "matches_oracle": list(region.retained_sets) == [scenario.true_set],
                }
            case BaselineMethod.VMC:
                methods[str(method)] = _result_record(vmc_ci(summaries, table, alpha), truth)
            case BaselineMethod.MV:
                methods[str(method)] = _result_record(mv_ci(summaries, table, alpha), truth)
            case BaselineMethod.MEDIAN:
                result = median_ci(
                    summaries,
                    alpha,
                    config.median_resamples,
                    stream.substream(BOOTSTRAP_OFFSET),
                )
                methods[str(method)] = _result_record(result, truth)
            case BaselineMethod.MNB:
                point = vmc_point(summaries, table)[0]
                result = mnb_ci(
                    point,
                    [s.n for s in data.sites],
                    _mnb_estimator(scenario, data),
                    alpha,
                    stream.substream(BOOTSTRAP_OFFSET + 1),
                    upsilon=config.upsilon,
                    resamples=config.mnb_resamples,
                )
                methods[str(method)] = _result_record(result, truth)
            case BaselineMethod.ORACLE:
                lo, hi = oracle_ci(summaries, scenario.true_set, alpha)
                methods[str(method)] = {
                    "covered": lo <= truth <= hi,
                    "length": hi - lo,
                    "lo": lo,
                    "hi": hi,
                    "point": (lo + hi) / 2,
                }
            case BaselineMethod.OBA:
                # completed once every replication is in
                point, se, _ = vmc_point(summaries, table)
                record["vmc_estimate"] = {"point": point, "se": se}
    return record


def _apply_oba(records: list[dict], truth: float, alpha: float):
    """Second pass of the oracle bias-aware interval: rescale each replication's
    SE by ESE / mean(SE) and use the Monte-Carlo bias of the VMC estimator."""
    ok = [r for r in records if r["status"] == "ok"]
    if len(ok) < 2:
        logging.warning("Too few successful replications for the bias-aware interval")
        return
    points = [r["vmc_estimate"]["point"] for r in ok]
    ses = [r["vmc_estimate"]["se"] for r in ok]
    ratio = ese_ratio(points, ses)
    bias = float(np.mean(points)) - truth
    for r, point, se in zip(ok, points, ses, strict=True):
        r["methods"][str(BaselineMethod.OBA)] = _result_record(
            oba_ci(point, ratio * se, bias, alpha),
            truth,
        )


def _summarize(
    records: list[dict],
    methods: Sequence[BaselineMethod],
) -> list[MethodSummary]:
    ok = [r for r in records if r["status"] == "ok"]
    summaries = []
    for method in methods:
        results = [r["methods"][str(method)] for r in ok if str(method) in r["methods"]]
        if not results:
            continue
        coverage = float(np.mean([res["covered"] for res in results]))
        summaries.append(
            MethodSummary(
                method=method,
                coverage=coverage,
                mc_se=math.sqrt(coverage * (1 - coverage) / len(results)),
                avg_length=float(np.mean([res["length"] for res in results])),
                replications=len(results),
            ),
        )
    return summaries


def _experiment_description(scenario: Scenario, config: ExperimentConfig) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "scenario": scenario.describe(),
        "config": config.describe(),
    }


def _truth(scenario: Scenario) -> float:
    stream = RandomStream.for_replication(scenario.seed, 0).substream(DATA_OFFSET)
    return generate(scenario.replace(n=20, target_size=1), stream).truth


def run_experiment(
    scenario: Scenario,
    config: ExperimentConfig | None = None,
    cache: ReplicationCache | None = None,
    workers: int | None = None,
    progress: bool = True,
) -> ExperimentReport:
    config = config or ExperimentConfig()
    if scenario.kind == ScenarioKind.HIGHDIM and BaselineMethod.MNB in config.methods:
        msg = "The m-out-of-n bootstrap is not available for high-dimensional scenarios"
        raise ValueError(msg)
    workers = workers or env.max_workers()
    description = _experiment_description(scenario, config)
    start = time.perf_counter()

    def one(r: int) -> dict:
        key = replication_key(description, r)
        if cache is not None:
            cached = cache.get(key)
            if cached is not None:
                return cached
        try:
            record = run_replication(scenario, config, r)
        except _REPLICATION_ERRORS as e:
            logging.warning(f"Replication {r} failed: {type(e).__name__}: {e}")
            return {"replication": r, "status": "failed", "error": type(e).__name__}
        if cache is not None:
            cache.put(key, record)
        return record

    records: list[dict | None] = [None] * scenario.replications
    with (
        ThreadPoolExecutor(max_workers=workers) as pool,
        tqdm(
            total=scenario.replications,
            disable=not progress,
            desc=f"{scenario.kind} a={scenario.separation:g}",
        ) as pbar,
    ):
        futures = {pool.submit(one, r): r for r in range(scenario.replications)}
        for future in as_completed(futures):
            records[futures[future]] = future.result()
            pbar.update(1)

    if BaselineMethod.OBA in config.methods:
        _apply_oba(records, _truth(scenario), config.tuning.alpha)
    failed = sum(r["status"] != "ok" for r in records)
    runtime = time.perf_counter() - start
    report = ExperimentReport(
        scenario=scenario,
        config=config,
        summaries=_summarize(records, config.methods),
        records=records,
        failed=failed,
        runtime_seconds=runtime,
    )
    logging.info(
        f"Finished {scenario.replications} replications "
        f"({failed} failed) in {humanize.naturaldelta(runtime)}",
    )
    if not report.valid:
        logging.warning(
            f"{failed} failed replications exceed the "
            f"{config.max_failure_rate:.0%} cap, the experiment is invalid",
        )
    return report


def run_rho_sensitivity(
    scenario: Scenario,
    props: Sequence[float] = (0.05, 0.1, 0.2, 0.3, 0.4, 0.5),
    resample_sizes: Sequence[int] = (500, 1000, 5000),
    config: ExperimentConfig | None = None,
    progress: bool = False,
) -> list[dict]:
    """Coverage and average length of RIFL for every (prop, M) combination.
    Every combination sees the same simulated data."""
    config = config or ExperimentConfig()
    rows = []
    for resamples in resample_sizes:
        for prop in props:
            tuning = config.tuning.replace(prop=prop, resamples=resamples)
            report = run_experiment(
                scenario,
                config.replace(methods=(BaselineMethod.RIFL,), tuning=tuning),
                progress=progress,
            )
            summary = report.summary_for(BaselineMethod.RIFL)
            rows.append(
                {
                    "prop": prop,
                    "resamples": resamples,
                    "coverage": summary.coverage,
                    "mc_se": summary.mc_se,
                    "avg_length": summary.avg_length,
                },
            )
    return rows


@dataclass(frozen=True)
class SamplingCheck:
    frequency: float
    """Share of replications where some resample lies within err_n of the truth."""
    err_n: float
    replications: int


def true_dissimilarities(
    data: GeneratedData,
    table: DissimilarityTable,
) -> tuple[np.ndarray, np.ndarray | None]:
    rows, cols = pair_indices(table.n_sites)
    true_l = data.site_targets[rows] - data.site_targets[cols]
    if not table.has_global or data.site_thetas is None:
        return true_l, None
    diff = data.site_thetas[rows] - data.site_thetas[cols]
    return true_l, np.sum(diff**2, axis=1)


def run_sampling_check(
    scenario: Scenario,
    tuning: TuningConfig | None = None,
    replications: int | None = None,
    progress: bool = False,
) -> SamplingCheck:
    """How often the best of M resampled tables is within err_n(M, nu) of the
    true dissimilarities, in standardized units."""
    tuning = tuning or TuningConfig(resamples=500, nu=0.0025)
    replications = replications or scenario.replications
    err_n = sampling_accuracy(tuning.resamples, tuning.nu, scenario.n_sites, scenario.n)
    hits = 0
    for r in tqdm(range(replications), disable=not progress, desc="sampling check"):
        stream = RandomStream.for_replication(scenario.seed, r)
        data = generate(scenario, stream.substream(DATA_OFFSET))
        _, table = site_inputs(scenario, data, stream)
        draws = resample_dissimilarities(table, tuning.resamples, stream)
        true_l, true_d = true_dissimilarities(data, table)
        hits += min_resample_discrepancy(draws, table, true_l, true_d) <= err_n
    return SamplingCheck(
        frequency=hits / replications,
        err_n=err_n,
        replications=replications,
    )
