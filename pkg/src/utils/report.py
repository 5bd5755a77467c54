"""
CSV / JSON / Markdown emitters for benchmark tables, FMG accuracy tables and cost-model reports.

Markdown is rendered from the jinja2 templates in templates/. The CSV layout is flat:
fixed columns followed by one ops_<tag>_L<level> column per operator count, and
parse_csv reads it back into the same rows.
"""

import csv
import io
import json
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import jinja2
from loguru import logger

from src.models import AccuracyReport, MemoryModel, ReportFormat, TableArtifact, TableRow, TMEReport

TEMPLATES_DIR = Path(__file__).resolve().parents[2] / "templates"

FIELDS = ["solver", "formulation", "level", "dofs", "iterations", "time_s", "setup_s",
          "coarse_iterations", "converged", "error"]

_env: Optional[jinja2.Environment] = None


def _template(name: str) -> jinja2.Template:
    global _env
    if _env is None:
        _env = jinja2.Environment(loader=jinja2.FileSystemLoader(str(TEMPLATES_DIR)),
                                  undefined=jinja2.StrictUndefined, keep_trailing_newline=True)
    return _env.get_template(name)


def op_count_columns(op_counts: Dict[str, Dict[int, int]]) -> Dict[str, int]:
    """{tag: {level: n}} -> {"A1_L3": n, ...}."""
    return {f"{tag}_L{level}": n for tag in sorted(op_counts) for level, n in sorted(op_counts[tag].items())}


def table_to_csv(artifact: TableArtifact) -> str:
    op_keys = sorted({k for r in artifact.rows for k in r.op_counts})
    output = io.StringIO()
    writer = csv.DictWriter(output, fieldnames=FIELDS + [f"ops_{k}" for k in op_keys])
    writer.writeheader()
    for r in artifact.rows:
        row: Dict[str, Any] = {
            "solver": r.solver,
            "formulation": r.formulation,
            "level": r.level,
            "dofs": r.dofs,
            "iterations": r.iterations,
            "time_s": repr(r.time_s),
            "setup_s": repr(r.setup_s) if r.setup_s is not None else "",
            "coarse_iterations": r.coarse_iterations,
            "converged": r.converged,
            "error": r.error or "",
        }
        for k in op_keys:
            row[f"ops_{k}"] = r.op_counts.get(k, "")
        writer.writerow(row)
    return output.getvalue()


def parse_csv(text: str) -> List[TableRow]:
    """Inverse of table_to_csv."""
    rows = []
    for rec in csv.DictReader(io.StringIO(text)):
        ops = {k[4:]: int(v) for k, v in rec.items() if k.startswith("ops_") and v != ""}
        rows.append(TableRow(
            solver=rec["solver"],
            formulation=rec["formulation"],
            level=int(rec["level"]),
            dofs=int(rec["dofs"]),
            iterations=int(rec["iterations"]),
            time_s=float(rec["time_s"]),
            setup_s=float(rec["setup_s"]) if rec["setup_s"] else None,
            coarse_iterations=int(rec["coarse_iterations"]),
            converged=rec["converged"] == "True",
            op_counts=ops,
            error=rec["error"] or None,
        ))
    return rows


def table_to_json(artifact: TableArtifact) -> str:
    return json.dumps({
        "title": artifact.title,
        "metadata": artifact.metadata,
        "generated_at": artifact.created_at.isoformat(),
        "rows": [r.model_dump(mode="json") for r in artifact.rows],
    }, indent=2)


def table_to_markdown(artifact: TableArtifact) -> str:
    return _template("run_table.md.j2").render(title=artifact.title, metadata=artifact.metadata,
                                               rows=artifact.rows)


def render_table(artifact: TableArtifact, fmt: ReportFormat) -> str:
    fmt = ReportFormat(fmt)
    if fmt is ReportFormat.CSV:
        return table_to_csv(artifact)
    if fmt is ReportFormat.JSON:
        return table_to_json(artifact)
    return table_to_markdown(artifact)


def _accuracy_rows(reports: Sequence[AccuracyReport]) -> List[Dict[str, Any]]:
    by_level: Dict[int, Dict[str, Any]] = {}
    for i, rep in enumerate(reports):
        for entry in rep.levels:
            row = by_level.setdefault(entry.level, {"level": entry.level, "h": entry.h, "dofs": entry.dofs,
                                                    "gammas": [None] * len(reports)})
            row["gammas"][i] = entry.gamma
    return [by_level[k] for k in sorted(by_level)]


def accuracy_to_markdown(reports: Sequence[AccuracyReport]) -> str:
    return _template("fmg_table.md.j2").render(variants=[r.variant for r in reports],
                                               rows=_accuracy_rows(reports))


def accuracy_to_csv(reports: Sequence[AccuracyReport]) -> str:
    output = io.StringIO()
    writer = csv.writer(output)
    writer.writerow(["variant", "level", "h", "dofs", "total_error", "discretization_error", "gamma"])
    for rep in reports:
        for e in rep.levels:
            writer.writerow([rep.variant, e.level, repr(e.h), e.dofs, repr(e.total_error),
                             repr(e.discretization_error), repr(e.gamma)])
    return output.getvalue()


def accuracy_to_json(reports: Sequence[AccuracyReport]) -> str:
    return json.dumps({"reports": [r.model_dump(mode="json") for r in reports],
                       "generated_at": datetime.now().isoformat()}, indent=2)


def render_accuracy(reports: Sequence[AccuracyReport], fmt: ReportFormat) -> str:
    fmt = ReportFormat(fmt)
    if fmt is ReportFormat.CSV:
        return accuracy_to_csv(reports)
    if fmt is ReportFormat.JSON:
        return accuracy_to_json(reports)
    return accuracy_to_markdown(reports)


def predict_payload(memory: Sequence[MemoryModel], umg: Dict[str, float], ratios: Dict[str, float],
                    tme: TMEReport, mu_d: float, setup_table: Optional[List[Dict[str, str]]] = None) -> Dict[str, Any]:
    return {
        "memory": [dict(m.model_dump(mode="json"), gib=m.gib, tib=m.tib) for m in memory],
        "umg": umg,
        "ratios": ratios,
        "tme": tme.model_dump(mode="json"),
        "mu_d": mu_d,
        "setup_table": setup_table or [],
    }


def render_predict(payload: Dict[str, Any], fmt: ReportFormat) -> str:
    fmt = ReportFormat(fmt)
    if fmt is ReportFormat.JSON:
        return json.dumps(payload, indent=2)
    if fmt is ReportFormat.CSV:
        output = io.StringIO()
        writer = csv.writer(output)
        writer.writerow(["quantity", "value", "unit"])
        for m in payload["memory"]:
            writer.writerow([f"memory_L{m['L']}{'_on_the_fly' if m['on_the_fly'] else ''}", m["bytes_total"], "bytes"])
        for tag in ("A", "B", "C"):
            writer.writerow([f"umg_ops_{tag}", payload["umg"][tag], "count"])
        for name, value in payload["ratios"].items():
            writer.writerow([f"ratio_{name}", value, "1"])
        writer.writerow(["e_tme", payload["tme"]["e_tme"], "WU"])
        if payload["tme"]["e_partme"] is not None:
            writer.writerow(["e_partme", payload["tme"]["e_partme"], "WU"])
        return output.getvalue()
    return _template("predict.md.j2").render(**payload)


def write_report(text: str, out_dir: Union[str, Path], stem: str, fmt: ReportFormat) -> Path:
    """Write text to <out_dir>/<stem>.<ext> and return the path."""
    ext = {ReportFormat.CSV: "csv", ReportFormat.JSON: "json", ReportFormat.MD: "md"}[ReportFormat(fmt)]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{stem}.{ext}"
    path.write_text(text, encoding="utf-8")
    logger.info(f"Wrote {path}")
    return path
