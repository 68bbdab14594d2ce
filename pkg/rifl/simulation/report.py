"""Report files of an experiment. Byte-identical for identical scenario and seed."""

import csv
from collections.abc import Sequence
from pathlib import Path

from rifl.simulation.experiment import SCHEMA_VERSION, ExperimentReport
from rifl.utils import canonical_dumps, format_number

SCENARIO_COLUMNS = (
    "kind",
    "n_sites",
    "majority_size",
    "n",
    "d",
    "coordinate",
    "separation",
    "replications",
    "seed",
)
CSV_COLUMNS = (
    "method",
    *SCENARIO_COLUMNS,
    "coverage",
    "mc_se",
    "avg_length",
    "completed",
)


def _cell(value) -> str:
    if isinstance(value, float):
        return format_number(value)
    return str(value)


def csv_rows(reports: Sequence[ExperimentReport]) -> list[dict[str, str]]:
    rows = []
    for report in reports:
        scenario = report.scenario.describe()
        for s in report.summaries:
            row = {"method": str(s.method)}
            row.update({c: _cell(scenario[c]) for c in SCENARIO_COLUMNS})
            row["coverage"] = _cell(s.coverage)
            row["mc_se"] = _cell(s.mc_se)
            row["avg_length"] = _cell(s.avg_length)
            row["completed"] = str(s.replications)
            rows.append(row)
    return rows


def report_payload(report: ExperimentReport) -> dict:
    """Everything except the runtime."""
    return {
        "schema_version": SCHEMA_VERSION,
        "scenario": report.scenario.describe(),
        "config": report.config.describe(),
        "failed": report.failed,
        "valid": report.valid,
        "summaries": [
            {
                "method": str(s.method),
                "coverage": s.coverage,
                "mc_se": s.mc_se,
                "avg_length": s.avg_length,
                "replications": s.replications,
            }
            for s in report.summaries
        ],
        "records": report.records,
    }


def gnuplot_blocks(reports: Sequence[ExperimentReport]) -> str:
    """One whitespace separated block per method, blocks split by two blank
    lines so they can be addressed with `index` in gnuplot."""
    by_method: dict[str, list[str]] = {}
    for report in reports:
        for s in report.summaries:
            by_method.setdefault(str(s.method), []).append(
                " ".join(
                    _cell(v)
                    for v in (
                        float(report.scenario.separation),
                        report.scenario.n,
                        s.coverage,
                        s.mc_se,
                        s.avg_length,
                    )
                ),
            )
    blocks = []
    for method, lines in by_method.items():
        header = f"# {method}\n# separation n coverage mc_se avg_length"
        blocks.append("\n".join([header, *lines]))
    return "\n\n\n".join(blocks) + "\n"


def write_reports(reports: Sequence[ExperimentReport], out_dir: Path) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "report.csv"
    with csv_path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(csv_rows(reports))
    json_path = out_dir / "report.json"
    json_path.write_text(
        canonical_dumps([report_payload(r) for r in reports]) + "\n",
        encoding="utf-8",
    )
    dat_path = out_dir / "report.dat"
    dat_path.write_text(gnuplot_blocks(reports), encoding="utf-8")
    return [csv_path, json_path, dat_path]
