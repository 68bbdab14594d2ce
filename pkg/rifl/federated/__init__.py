"""File-based exchange of summary records between sites and a coordinator."""

from rifl.federated.coordinator import RunConfig, aggregate, cmd_aggregate, tune
from rifl.federated.records import RecordMode, SiteExportRecord, read_records
from rifl.federated.site import ExportConfig, ExportMode, cmd_site_export

__all__ = [
    "ExportConfig",
    "ExportMode",
    "RecordMode",
    "RunConfig",
    "SiteExportRecord",
    "aggregate",
    "cmd_aggregate",
    "cmd_site_export",
    "read_records",
    "tune",
]
