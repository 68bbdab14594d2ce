"""
Coordinator side: ingest the sites' summary records and run the analysis.

Only summary records are read here. The aggregate uses
`RandomStream.for_replication(seed, 0)`, the same stream the in-process
pipeline uses for replication 0, so file-based and in-process analyses of the
same data agree exactly.
"""

import dataclasses
import logging
import time
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

import humanize
import numpy as np

from rifl.baselines import BaselineMethod, BaselineResult, median_ci, mv_ci, vmc_ci
from rifl.core import local_table, rifl_confidence_region, sampling_accuracy
from rifl.errors import SchemaError
from rifl.federated.records import RecordMode, SiteExportRecord, read_records
from rifl.highdim.dissimilarity import build_highdim_inputs
from rifl.lowdim import Functional, build_lowdim_inputs
from rifl.stats_kernel import BOOTSTRAP_OFFSET, RandomStream
from rifl.structs import ConfidenceRegion, DissimilarityTable, SiteSummary, TuningConfig
from rifl.utils import canonical_dumps, format_number

ANALYSIS_FILENAME = "analysis.json"
SUMMARY_METHODS = (BaselineMethod.VMC, BaselineMethod.MV, BaselineMethod.MEDIAN)
"""Comparators that need nothing beyond the summary records."""


@dataclass(frozen=True)
class RunConfig:
    tuning: TuningConfig = field(default_factory=TuningConfig)
    seed: int = 0
    methods: tuple[BaselineMethod, ...] = ()
    """Comparators reported next to the RIFL region."""
    median_resamples: int = 500

    def __post_init__(self):
        methods = tuple(BaselineMethod(m) for m in self.methods)
        unsupported = [m for m in methods if m not in SUMMARY_METHODS]
        if unsupported:
            msg = (
                f"Methods {[str(m) for m in unsupported]} cannot be computed from "
                f"summary records, choose from {[str(m) for m in SUMMARY_METHODS]}"
            )
            raise ValueError(msg)
        object.__setattr__(self, "methods", methods)

    def replace(self, **kwargs) -> "RunConfig":
        return dataclasses.replace(self, **kwargs)


def load_records(records: Sequence[SiteExportRecord]) -> list[SiteExportRecord]:
    """Validate a set of records and keep the latest round of every site,
    ordered by site id."""
    modes = {r.mode for r in records}
    if len(modes) != 1:
        msg = f"Records mix modes {sorted(str(m) for m in modes)}"
        raise SchemaError(msg)
    versions = {r.schema_version for r in records}
    if len(versions) != 1:
        msg = f"Records mix schema versions {sorted(versions)}"
        raise SchemaError(msg)
    latest: dict[int, SiteExportRecord] = {}
    seen: set[tuple[int, int]] = set()
    for record in records:
        key = (record.site_id, record.round)
        if key in seen:
            msg = f"Duplicate records for site {record.site_id} (round {record.round})"
            raise SchemaError(msg)
        seen.add(key)
        if record.site_id not in latest or record.round > latest[record.site_id].round:
            latest[record.site_id] = record
    if len(latest) < 3:
        msg = f"Need records from at least three sites, got {len(latest)}"
        raise SchemaError(msg)
    return [latest[site_id] for site_id in sorted(latest)]


def _target_functional(records: Sequence[SiteExportRecord]) -> Functional:
    targets = {r.target_indices for r in records}
    if len(targets) != 1:
        msg = "Sites disagree on the target coordinates"
        raise SchemaError(msg)
    (indices,) = targets
    if len(indices) == 1:
        return Functional.coordinate(indices[0] - 1)
    return Functional.subvector([i - 1 for i in indices])


def build_inputs(
    records: Sequence[SiteExportRecord],
) -> tuple[list[SiteSummary], DissimilarityTable]:
    """Summaries and dissimilarity table from validated records."""
    mode = records[0].mode
    match mode:
        case RecordMode.UNIVARIATE | RecordMode.MULTIVARIATE:
            summaries = [r.to_summary() for r in records]
            return summaries, local_table(summaries)
        case RecordMode.PARAMETRIC:
            fits = [r.to_parametric_fit() for r in records]
            return build_lowdim_inputs(fits, _target_functional(records))
        case RecordMode.HIGHDIM:
            incomplete = [r.site_id for r in records if r.round != 2]
            if incomplete:
                msg = f"Sites {incomplete} have not delivered their round-2 records"
                raise SchemaError(msg)
            try:
                return build_highdim_inputs(
                    [r.to_summary() for r in records],
                    [r.theta_tilde for r in records],
                    [r.bias_components for r in records],
                )
            except ValueError as e:
                if isinstance(e, SchemaError):
                    raise
                raise SchemaError(str(e)) from e
    msg = f"Unknown record mode {mode}"
    raise SchemaError(msg)


@dataclass(frozen=True)
class Analysis:
    mode: RecordMode
    site_ids: tuple[int, ...]
    region: ConfidenceRegion
    comparators: dict[str, BaselineResult]

    def payload(self) -> dict:
        region = self.region
        out: dict = {
            "mode": str(self.mode),
            "site_ids": list(self.site_ids),
            "rho": region.rho,
            "rule_met": region.rule_met,
            "resamples": region.resamples,
            "retained_count": region.retained_count,
            "generalizability": {
                str(site_id): p
                for site_id, p in zip(self.site_ids, region.generalizability, strict=True)
            },
            "retained_sets": [
                {"sites": [self.site_ids[i] for i in index_set], "count": count}
                for index_set, count in region.retained_sets.items()
            ],
        }
        if region.is_multivariate:
            out["ellipsoids"] = [
                {"center": e.center, "precision": e.precision, "radius": e.radius}
                for e in region.ellipsoids
            ]
        else:
            out["intervals"] = [list(seg) for seg in region.intervals]
            out["midpoint"] = region.midpoint
        out["comparators"] = {
            name: {
                "interval": list(result.interval),
                "point": result.point,
                "se": result.se,
                "selected": (
                    None
                    if result.selected is None
                    else [self.site_ids[i] for i in result.selected]
                ),
            }
            for name, result in self.comparators.items()
        }
        return out

    def render(self) -> str:
        region = self.region
        lines = [f"Sites: {len(self.site_ids)} ({self.mode} records)"]
        if region.is_multivariate:
            lines.append(f"Confidence region: union of {len(region.ellipsoids)} ellipsoids")
        else:
            segments = ", ".join(
                f"[{format_number(lo)}, {format_number(hi)}]" for lo, hi in region.intervals
            )
            lines.append(f"Confidence region: {segments}")
            lines.append(f"Midpoint: {format_number(region.midpoint)}")
        lines.append(
            f"Retained resamples: {region.retained_count} of {region.resamples}"
            f" (rho = {format_number(region.rho)})",
        )
        if not region.rule_met:
            lines.append("Warning: no rho on the grid reached the requested proportion")
        lines.append("Generalizability:")
        lines.extend(
            f"  site {site_id}: {p:.3f}"
            for site_id, p in zip(self.site_ids, region.generalizability, strict=True)
        )
        for name, result in self.comparators.items():
            lo, hi = result.interval
            lines.append(f"{name}: [{format_number(lo)}, {format_number(hi)}]")
        return "\n".join(lines)


def aggregate(records: Sequence[SiteExportRecord], config: RunConfig) -> Analysis:
    records = load_records(records)
    summaries, table = build_inputs(records)
    stream = RandomStream.for_replication(config.seed, 0)
    region = rifl_confidence_region(summaries, table, config.tuning, stream)
    comparators: dict[str, BaselineResult] = {}
    alpha = config.tuning.alpha
    for method in config.methods:
        match method:
            case BaselineMethod.VMC:
                result = vmc_ci(summaries, table, alpha)
            case BaselineMethod.MV:
                result = mv_ci(summaries, table, alpha)
            case BaselineMethod.MEDIAN:
                result = median_ci(
                    summaries,
                    alpha,
                    config.median_resamples,
                    stream.substream(BOOTSTRAP_OFFSET),
                )
        comparators[str(method)] = result
    return Analysis(
        mode=records[0].mode,
        site_ids=tuple(r.site_id for r in records),
        region=region,
        comparators=comparators,
    )


def cmd_aggregate(
    records_dir: Path,
    config: RunConfig,
    out_path: Path | None = None,
) -> Analysis:
    start = time.perf_counter()
    analysis = aggregate(read_records(records_dir), config)
    out_path = Path(out_path) if out_path is not None else Path(records_dir) / ANALYSIS_FILENAME
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(canonical_dumps(analysis.payload()) + "\n", encoding="utf-8")
    logging.info(
        f"Aggregated {len(analysis.site_ids)} sites in "
        f"{humanize.naturaldelta(time.perf_counter() - start)}, wrote {out_path}",
    )
    return analysis


@dataclass(frozen=True)
class TuningRow:
    prop: float
    rho: float
    rule_met: bool
    retained_count: int
    length: float | None


def tune(
    records: Sequence[SiteExportRecord],
    props: Sequence[float],
    config: RunConfig,
) -> tuple[list[TuningRow], float]:
    """Selected rho and retained count per target proportion, and err_n of
    the resampling step."""
    records = load_records(records)
    summaries, table = build_inputs(records)
    rows = []
    for prop in props:
        tuning = config.tuning.replace(prop=prop)
        region = rifl_confidence_region(
            summaries,
            table,
            tuning,
            RandomStream.for_replication(config.seed, 0),
        )
        rows.append(
            TuningRow(
                prop=prop,
                rho=region.rho,
                rule_met=region.rule_met,
                retained_count=region.retained_count,
                length=None if region.is_multivariate else region.total_length,
            ),
        )
    err_n = sampling_accuracy(
        config.tuning.resamples,
        config.tuning.nu,
        len(summaries),
        float(np.min([s.n for s in summaries])),
    )
    return rows, err_n
