"""Site side of the federated protocol: turn a local data file into a summary record."""

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from rifl.causal import BasisConfig, CausalSiteData, TargetSample, fit_ate_site
from rifl.errors import SchemaError
from rifl.federated.records import RecordMode, SiteExportRecord, read_records
from rifl.highdim.dissimilarity import (
    HighDimConfig,
    HighDimSiteState,
    highdim_site_round1,
    highdim_site_round2,
)
from rifl.lowdim import Functional, delta_method_summary, fit_site_glm
from rifl.stats_kernel import Family, RandomStream
from rifl.utils import StrEnum


class ExportMode(StrEnum):
    PARAMETRIC = "parametric"
    HIGHDIM = "highdim"
    ATE = "ate"


@dataclass(frozen=True)
class ExportConfig:
    mode: ExportMode
    site_id: int
    family: Family = Family.LOGISTIC
    coordinates: tuple[int, ...] = (1,)
    """1-based covariate coordinates forming the target."""
    seed: int = 0
    round: int = 1
    local_only: bool = False
    """Parametric mode: drop theta_hat and c_hat and export only the target summary."""
    highdim: HighDimConfig | None = None
    bases: BasisConfig | None = None

    def __post_init__(self):
        object.__setattr__(self, "mode", ExportMode(self.mode))
        object.__setattr__(self, "family", Family(self.family))
        object.__setattr__(self, "coordinates", tuple(int(c) for c in self.coordinates))
        if self.site_id < 1:
            msg = f"site_id must be at least 1, got {self.site_id}"
            raise ValueError(msg)
        if not self.coordinates or min(self.coordinates) < 1:
            msg = f"Coordinates are 1-based, got {self.coordinates}"
            raise ValueError(msg)
        if self.round not in (1, 2):
            msg = f"round must be 1 or 2, got {self.round}"
            raise ValueError(msg)
        if self.round == 2 and self.mode != ExportMode.HIGHDIM:
            msg = "Only the highdim mode has a second round"
            raise ValueError(msg)
        if self.mode == ExportMode.HIGHDIM and len(self.coordinates) != 1:
            msg = "The highdim mode debiases a single coordinate"
            raise ValueError(msg)


def load_table(path: Path) -> np.ndarray:
    """Numeric table with one header row, comma or whitespace separated."""
    path = Path(path)
    with path.open(encoding="utf-8") as f:
        f.readline()
        second = f.readline()
    delimiter = "," if "," in second else None
    try:
        table = np.loadtxt(path, delimiter=delimiter, skiprows=1, ndmin=2)
    except ValueError as e:
        msg = f"Could not parse numeric table {path}: {e}"
        raise ValueError(msg) from e
    if table.shape[0] == 0:
        msg = f"{path} has no data rows"
        raise ValueError(msg)
    if not np.all(np.isfinite(table)):
        msg = f"{path} contains non-finite values"
        raise ValueError(msg)
    logging.info(f"Loaded {table.shape[0]} rows and {table.shape[1]} columns from {path}")
    return table


def _column(table: np.ndarray, index: int) -> np.ndarray:
    return np.ascontiguousarray(table[:, index])


def _covariates(table: np.ndarray, first: int) -> np.ndarray:
    # same memory layout as the arrays the in-process pipeline builds
    return np.ascontiguousarray(table[:, first:])


def _functional(coordinates: tuple[int, ...]) -> Functional:
    if len(coordinates) == 1:
        return Functional.coordinate(coordinates[0] - 1)
    return Functional.subvector([c - 1 for c in coordinates])


def export_parametric(table: np.ndarray, config: ExportConfig) -> SiteExportRecord:
    """First column is the outcome, the rest are covariates."""
    fit = fit_site_glm(
        _covariates(table, 1),
        _column(table, 0),
        config.family,
        site_id=config.site_id,
    )
    summary = delta_method_summary(fit, _functional(config.coordinates))
    extra = {"family": str(config.family)}
    if config.local_only:
        return SiteExportRecord(
            site_id=config.site_id,
            n=fit.n,
            mode=(
                RecordMode.MULTIVARIATE
                if summary.is_multivariate
                else RecordMode.UNIVARIATE
            ),
            beta_hat=summary.beta_hat,
            sigma_hat=summary.sigma_hat,
            omega_hat=summary.omega_hat,
            extra=extra,
        )
    return SiteExportRecord(
        site_id=config.site_id,
        n=fit.n,
        mode=RecordMode.PARAMETRIC,
        beta_hat=summary.beta_hat,
        sigma_hat=summary.sigma_hat,
        omega_hat=summary.omega_hat,
        theta_hat=fit.theta_hat,
        c_hat=fit.c_hat,
        target_indices=config.coordinates,
        extra=extra,
    )


def export_ate(
    table: np.ndarray,
    target: TargetSample,
    config: ExportConfig,
) -> SiteExportRecord:
    """Columns are outcome, treatment, then covariates."""
    data = CausalSiteData(
        X=_covariates(table, 2),
        A=_column(table, 1),
        Y=_column(table, 0),
    )
    fit = fit_ate_site(data, target, config.bases)
    summary = fit.summary(config.site_id)
    return SiteExportRecord(
        site_id=config.site_id,
        n=fit.n,
        mode=RecordMode.UNIVARIATE,
        beta_hat=summary.beta_hat,
        sigma_hat=summary.sigma_hat,
    )


def highdim_state(table: np.ndarray, config: ExportConfig) -> HighDimSiteState:
    """Round 1 of the two-round protocol. Deterministic in (seed, site_id), so
    round 2 recomputes it instead of keeping local state between rounds."""
    return highdim_site_round1(
        _covariates(table, 1),
        _column(table, 0),
        config.family,
        site_id=config.site_id,
        coordinate=config.coordinates[0],
        stream=RandomStream(config.seed).site_stream(config.site_id - 1),
        config=config.highdim,
    )


def _highdim_record(
    state: HighDimSiteState,
    config: ExportConfig,
    components=None,
) -> SiteExportRecord:
    return SiteExportRecord(
        site_id=state.site_id,
        n=state.summary.n,
        mode=RecordMode.HIGHDIM,
        beta_hat=state.summary.beta_hat,
        sigma_hat=state.summary.sigma_hat,
        theta_tilde=state.fit.theta_tilde,
        mu_tilde=state.fit.mu_tilde,
        round=2 if components is not None else 1,
        bias_components=components,
        target_indices=config.coordinates,
        extra={"family": str(config.family), "seed": config.seed},
    )


def peer_thetas(peers: list[SiteExportRecord], own_id: int) -> dict[int, np.ndarray]:
    thetas: dict[int, np.ndarray] = {}
    for record in peers:
        if record.mode != RecordMode.HIGHDIM:
            msg = f"Peer record of site {record.site_id} has mode {record.mode}"
            raise SchemaError(msg)
        if record.site_id == own_id or record.round != 1:
            continue
        if record.site_id in thetas:
            msg = f"Duplicate peer records for site {record.site_id}"
            raise SchemaError(msg)
        thetas[record.site_id] = record.theta_tilde
    if len(thetas) < 2:
        msg = f"Round 2 needs at least two peers, found {len(thetas)}"
        raise SchemaError(msg)
    return thetas


def export_highdim(
    table: np.ndarray,
    config: ExportConfig,
    peers: list[SiteExportRecord] | None = None,
) -> SiteExportRecord:
    state = highdim_state(table, config)
    if config.round == 1:
        return _highdim_record(state, config)
    if not peers:
        msg = "Round 2 needs the round-1 records of the peers"
        raise SchemaError(msg)
    thetas = peer_thetas(peers, config.site_id)
    for theta in thetas.values():
        if theta.shape != state.fit.theta_tilde.shape:
            msg = "Peer fits have a different number of covariates"
            raise SchemaError(msg)
    components = highdim_site_round2(state, thetas, config.highdim)
    logging.info(f"Site {config.site_id}: bias components towards {len(components)} peers")
    return _highdim_record(state, config, components)


def cmd_site_export(
    data_path: Path,
    config: ExportConfig,
    out_path: Path,
    peers_dir: Path | None = None,
    target_path: Path | None = None,
) -> SiteExportRecord:
    table = load_table(data_path)
    match config.mode:
        case ExportMode.PARAMETRIC:
            record = export_parametric(table, config)
        case ExportMode.ATE:
            if target_path is None:
                msg = "The ate mode needs a target covariate sample"
                raise ValueError(msg)
            target = TargetSample(load_table(target_path))
            record = export_ate(table, target, config)
        case ExportMode.HIGHDIM:
            peers = read_records(peers_dir) if peers_dir is not None else None
            record = export_highdim(table, config, peers)
    record.write(out_path)
    logging.info(f"Wrote {record.mode} record of site {record.site_id} to {out_path}")
    return record
