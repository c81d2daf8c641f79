from __future__ import annotations

from mangapipe.metrics import PrfCounts, DetectionEvalResult, JudgeSummary
from mangapipe.report import (
    detection_report,
    flatten_metrics,
    format_table,
    judge_report,
    render_report_figure,
    report_to_csv,
    report_to_json,
)
from mangapipe.tokens import NodeKind


def sample_detection_report() -> dict:
    result = DetectionEvalResult(per_kind={
        NodeKind.CHARACTER: PrfCounts(8, 2, 1),
        NodeKind.TEXT: PrfCounts(5, 0, 0),
        NodeKind.PANEL: PrfCounts(4, 0, 0),
        NodeKind.TAIL: PrfCounts(3, 1, 1),
    })
    return detection_report(result, params={"iou_thresh": 0.5})


def test_detection_report_uses_table_headers():
    report = sample_detection_report()
    assert set(report["metrics"]) == {"Characters", "Texts", "Panels", "Tails"}
    assert set(report["metrics"]["Characters"]) >= {"F1", "Precision", "Recall"}
    assert report["metrics"]["Texts"]["F1"] == 1.0


def test_judge_report_has_avg_column():
    summary = JudgeSummary(per_judge={"a": 4.0, "b": 2.0}, per_judge_n={"a": 1, "b": 1},
                           overall=3.0, n=2)
    report = judge_report(summary)
    assert report["metrics"]["Avg"] == 3.0
    assert report["metrics"]["a"] == 4.0


def test_csv_is_delimited_and_sorted():
    csv_text = report_to_csv(sample_detection_report())
    lines = csv_text.strip().splitlines()
    assert lines[0] == "metric,value"
    names = [l.split(",")[0] for l in lines[1:]]
    assert names == sorted(names)
    assert any(name == "Characters F1" for name in names)


def test_flatten_skips_non_numeric():
    rows = flatten_metrics({"a": {"b": 1.0, "note": "text"}, "c": 2})
    assert rows == [("a b", 1.0), ("c", 2.0)]


def test_figure_rendering_writes_png(tmp_path):
    path = tmp_path / "report.png"
    render_report_figure(sample_detection_report(), path)
    data = path.read_bytes()
    assert data[:8] == b"\x89PNG\r\n\x1a\n"
    assert len(data) > 1000


def test_json_roundtrip_and_table():
    report = sample_detection_report()
    assert report_to_json(report).endswith("\n")
    table = format_table(report)
    assert "Characters F1" in table
