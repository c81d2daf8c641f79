"""Evaluation report serialization: JSON, delimited CSV and rendered figures.

Metric names follow the result-table headers ("F1", "Precision", "Recall",
"AMI", "AP", per-judge columns plus "Avg") so reports read like the tables
they mirror.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .metrics import DetectionEvalResult, GroundingEvalResult, JudgeSummary
from .tokens import NodeKind

REPORT_SCHEMA = "mangapipe/eval-report-v1"

KIND_HEADERS = {
    NodeKind.CHARACTER: "Characters",
    NodeKind.TEXT: "Texts",
    NodeKind.PANEL: "Panels",
    NodeKind.TAIL: "Tails",
}


def detection_report(result: DetectionEvalResult, params: dict | None = None) -> dict:
    metrics = {}
    for kind, counts in result.per_kind.items():
        header = KIND_HEADERS[kind]
        metrics[header] = {
            "F1": counts.f1,
            "Precision": counts.precision,
            "Recall": counts.recall,
            "tp": counts.tp, "fp": counts.fp, "fn": counts.fn,
        }
    return _report("detection", metrics, params)


def clustering_report(per_page: list[float], params: dict | None = None) -> dict:
    metrics = {"AMI": sum(per_page) / len(per_page) if per_page else 1.0}
    return _report("clustering", metrics, params, details={"per_page": per_page})


def association_report(text_char_ap: float, text_tail_ap: float,
                       params: dict | None = None, details: dict | None = None) -> dict:
    metrics = {"Text-Char AP": text_char_ap, "Text-Tail AP": text_tail_ap}
    return _report("association", metrics, params, details=details)


def grounding_report(result: GroundingEvalResult | None, pooled: dict | None = None,
                     params: dict | None = None, details: dict | None = None) -> dict:
    if pooled is None:
        pooled = {
            "F1 Score": result.f1,
            "Precision": result.precision,
            "Recall": result.recall,
            "tp": result.counts.tp, "fp": result.counts.fp, "fn": result.counts.fn,
        }
    return _report("grounding", pooled, params, details=details)


def judge_report(summary: JudgeSummary, params: dict | None = None) -> dict:
    metrics: dict = dict(summary.per_judge)
    metrics["Avg"] = summary.overall
    return _report("judge", metrics, params, details={"n": summary.n, "per_judge_n": summary.per_judge_n})


def _report(kind: str, metrics: dict, params: dict | None, details: dict | None = None) -> dict:
    doc = {
        "schema_version": REPORT_SCHEMA,
        "kind": kind,
        "metrics": metrics,
        "params": params or {},
    }
    if details:
        doc["details"] = details
    return doc


def report_to_json(report: dict) -> str:
    return json.dumps(report, ensure_ascii=False, indent=2, sort_keys=True) + "\n"


def flatten_metrics(metrics: dict, prefix: str = "") -> list[tuple[str, float]]:
    rows: list[tuple[str, float]] = []
    for key in sorted(metrics):
        value = metrics[key]
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            rows.extend(flatten_metrics(value, prefix=f"{name} "))
        elif isinstance(value, (int, float)):
            rows.append((name, float(value)))
    return rows


def report_to_csv(report: dict) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["metric", "value"])
    for name, value in flatten_metrics(report.get("metrics", {})):
        writer.writerow([name, f"{value:.6g}"])
    return buf.getvalue()


def render_report_figure(report: dict, path) -> None:
    """Bar chart of the report's score-like metrics (counts are left out)."""
    rows = [(n, v) for n, v in flatten_metrics(report.get("metrics", {}))
            if not n.split()[-1] in {"tp", "fp", "fn", "n"}]
    names = [n for n, _ in rows]
    values = [v for _, v in rows]
    height = max(2.0, 0.5 * len(rows) + 1.2)
    fig, ax = plt.subplots(figsize=(7, height))
    ypos = range(len(rows))
    ax.barh(ypos, values, color="#4878a8")
    ax.set_yticks(list(ypos))
    ax.set_yticklabels(names)
    ax.invert_yaxis()
    ax.set_xlabel("score")
    ax.set_title(f"{report.get('kind', 'eval')} report")
    upper = max([1.0] + values)
    ax.set_xlim(0, upper * 1.05)
    for y, v in zip(ypos, values):
        ax.text(v, y, f" {v:.3f}", va="center", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def write_report(report: dict, out_base) -> dict[str, Path]:
    """Write <base>.json, <base>.csv and <base>.png; returns the paths."""
    out_base = Path(out_base)
    out_base.parent.mkdir(parents=True, exist_ok=True)
    paths = {
        "json": out_base.with_suffix(".json"),
        "csv": out_base.with_suffix(".csv"),
        "png": out_base.with_suffix(".png"),
    }
    paths["json"].write_text(report_to_json(report), encoding="utf-8")
    paths["csv"].write_text(report_to_csv(report), encoding="utf-8")
    render_report_figure(report, paths["png"])
    return paths


def format_table(report: dict) -> str:
    """Console summary: fixed-width metric/value table."""
    rows = flatten_metrics(report.get("metrics", {}))
    if not rows:
        return "(no metrics)"
    width = max(len(n) for n, _ in rows)
    lines = [f"{n.ljust(width)}  {v:.4f}" for n, v in rows]
    return "\n".join(lines)
