"""
Summary records exchanged between sites and the coordinator.

A record file holds canonical JSON of the form
    {"checksum": <sha256 hex of canonical payload>, "payload": {...}}
No field of a record grows with the number of observations at a site.
"""

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from rifl.errors import SchemaError
from rifl.highdim.dissimilarity import BiasComponents
from rifl.lowdim import ParametricSiteFit
from rifl.structs import SiteSummary
from rifl.utils import StrEnum, canonical_dumps

SCHEMA_VERSION = 1
RECORD_SUFFIX = ".rifl.json"


class RecordMode(StrEnum):
    UNIVARIATE = "univariate"
    """beta_hat and sigma_hat only, e.g. a treatment effect."""
    MULTIVARIATE = "multivariate"
    """beta_hat and omega_hat only."""
    PARAMETRIC = "parametric"
    """Low-dimensional GLM: theta_hat and c_hat, target chosen by target_indices."""
    HIGHDIM = "highdim"
    """Debiased coordinate, lasso fit and (round 2) per-peer bias components."""


_REQUIRED = {
    RecordMode.UNIVARIATE: ("beta_hat", "sigma_hat"),
    RecordMode.MULTIVARIATE: ("beta_hat", "omega_hat"),
    RecordMode.PARAMETRIC: ("beta_hat", "theta_hat", "c_hat", "target_indices"),
    RecordMode.HIGHDIM: ("beta_hat", "sigma_hat", "theta_tilde", "mu_tilde"),
}
_ARRAY_FIELDS = ("beta_hat", "omega_hat", "theta_hat", "c_hat", "theta_tilde")


@dataclass(frozen=True)
class SiteExportRecord:
    site_id: int
    n: int
    mode: RecordMode
    beta_hat: np.ndarray
    sigma_hat: float | None = None
    omega_hat: np.ndarray | None = None
    theta_hat: np.ndarray | None = None
    c_hat: np.ndarray | None = None
    target_indices: tuple[int, ...] | None = None
    """1-based coordinates of theta forming the target (parametric mode)."""
    theta_tilde: np.ndarray | None = None
    mu_tilde: float | None = None
    round: int = 1
    bias_components: dict[int, BiasComponents] | None = None
    """Round-2 corrections (delta_hat, v_hat) towards each peer site id."""
    schema_version: int = SCHEMA_VERSION
    extra: dict[str, Any] = field(default_factory=dict)
    """Free-form metadata such as family or seed."""

    def __post_init__(self):
        object.__setattr__(self, "mode", RecordMode(self.mode))
        for name in _ARRAY_FIELDS:
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, np.asarray(value, dtype=float))
        if self.schema_version != SCHEMA_VERSION:
            msg = f"Unsupported schema_version {self.schema_version}"
            raise SchemaError(msg)
        if self.site_id < 1 or self.n < 1:
            msg = f"Invalid site_id {self.site_id} or n {self.n}"
            raise SchemaError(msg)
        for name in _REQUIRED[self.mode]:
            if getattr(self, name) is None:
                msg = f"{self.mode} record of site {self.site_id} is missing {name}"
                raise SchemaError(msg)
        if self.sigma_hat is not None and not self.sigma_hat > 0:
            msg = f"Site {self.site_id}: sigma_hat must be positive"
            raise SchemaError(msg)
        if self.round not in (1, 2):
            msg = f"Round must be 1 or 2, got {self.round}"
            raise SchemaError(msg)
        if self.round == 2 and self.bias_components is None:
            msg = f"Round-2 record of site {self.site_id} has no bias components"
            raise SchemaError(msg)
        if self.bias_components is not None and self.site_id in self.bias_components:
            msg = f"Site {self.site_id} lists bias components towards itself"
            raise SchemaError(msg)

    def to_summary(self) -> SiteSummary:
        if self.mode == RecordMode.PARAMETRIC:
            msg = "Parametric summaries are rebuilt from theta_hat and c_hat"
            raise ValueError(msg)
        try:
            return SiteSummary(
                site_id=self.site_id,
                beta_hat=self.beta_hat,
                n=self.n,
                sigma_hat=self.sigma_hat,
                omega_hat=self.omega_hat,
            )
        except ValueError as e:
            raise SchemaError(str(e)) from e

    def to_parametric_fit(self) -> ParametricSiteFit:
        return ParametricSiteFit(
            theta_hat=self.theta_hat,
            c_hat=self.c_hat,
            n=self.n,
            site_id=self.site_id,
        )

    def payload(self) -> dict:
        out: dict[str, Any] = {
            "schema_version": self.schema_version,
            "site_id": self.site_id,
            "n": self.n,
            "mode": str(self.mode),
            "round": self.round,
        }
        for name in (*_ARRAY_FIELDS, "sigma_hat", "mu_tilde", "target_indices"):
            value = getattr(self, name)
            if value is not None:
                out[name] = list(value) if name == "target_indices" else value
        if self.bias_components is not None:
            out["bias_components"] = {
                str(peer): {"delta_hat": c.delta_hat, "v_hat": c.v_hat}
                for peer, c in sorted(self.bias_components.items())
            }
        if self.extra:
            out["extra"] = self.extra
        return out

    def to_json(self) -> str:
        payload = self.payload()
        return canonical_dumps({"checksum": checksum(payload), "payload": payload})

    @classmethod
    def from_json(cls, text: str) -> "SiteExportRecord":
        try:
            outer = json.loads(text)
        except json.JSONDecodeError as e:
            msg = f"Record is not valid JSON: {e}"
            raise SchemaError(msg) from e
        if not isinstance(outer, dict) or set(outer) != {"checksum", "payload"}:
            msg = "Record must contain exactly a checksum and a payload"
            raise SchemaError(msg)
        payload = outer["payload"]
        if checksum(payload) != outer["checksum"]:
            msg = "Record checksum does not match its payload"
            raise SchemaError(msg)
        return cls.from_payload(payload)

    @classmethod
    def from_payload(cls, payload: dict) -> "SiteExportRecord":
        version = payload.get("schema_version")
        if version != SCHEMA_VERSION:
            msg = f"Unsupported schema_version {version!r}"
            raise SchemaError(msg)
        known = {
            "schema_version",
            "site_id",
            "n",
            "mode",
            "round",
            "bias_components",
            "extra",
            "sigma_hat",
            "mu_tilde",
            "target_indices",
            *_ARRAY_FIELDS,
        }
        unknown = set(payload) - known
        if unknown:
            msg = f"Unknown record fields {sorted(unknown)}"
            raise SchemaError(msg)
        kwargs = dict(payload)
        try:
            kwargs["mode"] = RecordMode(kwargs["mode"])
        except (KeyError, ValueError) as e:
            msg = f"Bad or missing record mode: {e}"
            raise SchemaError(msg) from e
        if "target_indices" in kwargs:
            kwargs["target_indices"] = tuple(int(i) for i in kwargs["target_indices"])
        if "bias_components" in kwargs:
            kwargs["bias_components"] = {
                int(peer): BiasComponents(delta_hat=c["delta_hat"], v_hat=c["v_hat"])
                for peer, c in kwargs["bias_components"].items()
            }
        try:
            return cls(**kwargs)
        except (TypeError, ValueError) as e:
            if isinstance(e, SchemaError):
                raise
            msg = f"Malformed record: {e}"
            raise SchemaError(msg) from e

    def write(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json() + "\n", encoding="utf-8")
        return path

    @classmethod
    def read(cls, path: Path) -> "SiteExportRecord":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def checksum(payload: dict) -> str:
    return hashlib.sha256(canonical_dumps(payload).encode("utf-8")).hexdigest()


def record_filename(site_id: int, round_: int = 1) -> str:
    return f"site{site_id:03d}.round{round_}{RECORD_SUFFIX}"


def read_records(directory: Path) -> list[SiteExportRecord]:
    directory = Path(directory)
    paths = sorted(directory.glob(f"*{RECORD_SUFFIX}"))
    if not paths:
        msg = f"No {RECORD_SUFFIX} records found in {directory}"
        raise SchemaError(msg)
    return [SiteExportRecord.read(p) for p in paths]
