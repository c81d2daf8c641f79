"""Command-line front end.

    mangapipe run PAGES_DIR OUT_DIR [flags]     full pipeline against live endpoints
    mangapipe eval KIND --pred P [--gt G]       metric suite; writes json/csv/figure
    mangapipe mock-serve FIXTURE_DIR [--port]   fixture-replaying protocol server
    mangapipe decode TASK [--tokens-file F]     token-stream debugging
    mangapipe fixtures-gen DEST                 regenerate the synthetic fixtures

Exit codes: 0 success, 1 partial failures, 2 configuration or usage errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

from . import client as mc
from . import fixtures
from .dataset_io import (
    SchemaError,
    load_caption_annotations,
    load_page_annotations,
    load_verdicts,
)
from .metrics import (
    DetectionEvalResult,
    PrfCounts,
    ami,
    association_ap,
    detection_eval,
    grounding_eval,
    judge_summarize,
)
from .mock_server import FixtureError, MockServer
from .page_graph import Thresholds
from .pipeline import PipelineConfig, run_pages
from .prompts import NarrativeStyle
from .report import (
    association_report,
    clustering_report,
    detection_report,
    format_table,
    grounding_report,
    judge_report,
    render_report_figure,
    report_to_csv,
    report_to_json,
)
from .tokens import (
    NodeKind,
    ParseError,
    parse_detection,
    parse_grounded_caption,
    parse_ocr,
    parse_pregrounded,
)
from .transcript import NameMap

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_USAGE = 2

EVAL_KINDS = ("detection", "clustering", "association", "grounding", "judge")


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mangapipe",
                                 description="Manga page-to-prose pipeline and evaluation harness")
    sub = ap.add_subparsers(dest="cmd", required=True)

    run = sub.add_parser("run", help="run the full pipeline over a directory of page images")
    run.add_argument("pages_dir")
    run.add_argument("out_dir")
    run.add_argument("--infer-url", default=os.environ.get(mc.ENV_INFER_URL),
                     help=f"inference endpoint (default ${mc.ENV_INFER_URL})")
    run.add_argument("--chat-url", default=os.environ.get(mc.ENV_CHAT_URL),
                     help=f"chat endpoint (default ${mc.ENV_CHAT_URL})")
    run.add_argument("--style", choices=[s.name.lower() for s in NarrativeStyle],
                     default="prose")
    run.add_argument("--name-map", help="JSON file mapping cluster label -> character name")
    run.add_argument("--parallelism", type=int, default=1)
    run.add_argument("--theta-char-char", type=float, default=0.5)
    run.add_argument("--theta-text-char", type=float, default=0.5)
    run.add_argument("--theta-text-tail", type=float, default=0.5)
    run.add_argument("--ocr-min-iou", type=float, default=0.1)
    run.add_argument("--grounding-min-iou", type=float, default=0.5)
    run.add_argument("--timeout", type=float, default=60.0)
    run.add_argument("--attempts", type=int, default=3)
    run.add_argument("--json", action="store_true", help="machine-readable summary on stdout")

    ev = sub.add_parser("eval", help="evaluate predictions against ground truth")
    ev.add_argument("kind", choices=EVAL_KINDS)
    ev.add_argument("--pred", required=True)
    ev.add_argument("--gt", help="required for every kind except judge")
    ev.add_argument("--out", default="eval_report", help="report base path (json/csv/png)")
    ev.add_argument("--iou-thresh", type=float, default=0.5)
    ev.add_argument("--no-figures", action="store_true", help="skip the rendered figure")
    ev.add_argument("--lenient", action="store_true", help="warn on unknown schema fields")
    ev.add_argument("--json", action="store_true", help="print the report JSON to stdout")

    ms = sub.add_parser("mock-serve", help="serve canned protocol responses from a fixture dir")
    ms.add_argument("fixture_dir")
    ms.add_argument("--port", type=int, default=8750)
    ms.add_argument("--delay", type=float, default=0.0)

    dec = sub.add_parser("decode", help="parse a token stream and print the records")
    dec.add_argument("task", choices=["detect", "ocr", "ground", "pregrounded"])
    dec.add_argument("--tokens-file", help="whitespace-separated tokens (default: stdin)")

    fg = sub.add_parser("fixtures-gen", help="regenerate the synthetic fixture tree")
    fg.add_argument("dest")
    fg.add_argument("--contract-corpus", help="also write the protocol contract corpus here")
    return ap


def _cmd_run(args) -> int:
    if not args.infer_url or not args.chat_url:
        print("error: inference and chat endpoints must be configured "
              f"(--infer-url/${mc.ENV_INFER_URL}, --chat-url/${mc.ENV_CHAT_URL})", file=sys.stderr)
        return EXIT_USAGE
    pages_dir = Path(args.pages_dir)
    if not pages_dir.is_dir():
        print(f"error: pages dir not found: {pages_dir}", file=sys.stderr)
        return EXIT_USAGE
    try:
        name_map = NameMap.from_json_file(args.name_map) if args.name_map else None
        config = PipelineConfig(
            infer_url=args.infer_url,
            chat_url=args.chat_url,
            thresholds=Thresholds(args.theta_char_char, args.theta_text_char, args.theta_text_tail),
            ocr_min_iou=args.ocr_min_iou,
            grounding_min_iou=args.grounding_min_iou,
            style=NarrativeStyle[args.style.upper()],
            name_map=name_map,
            parallelism=args.parallelism,
            timeout=args.timeout,
            attempts=args.attempts,
        )
    except (ValueError, OSError) as e:
        print(f"error: bad configuration: {e}", file=sys.stderr)
        return EXIT_USAGE
    manifest, failed = run_pages(pages_dir, Path(args.out_dir), config)
    summary = {
        "pages": len(manifest.pages),
        "failed": failed,
        "out_dir": str(args.out_dir),
    }
    if args.json:
        print(json.dumps(summary, sort_keys=True))
    else:
        for p in manifest.pages:
            state = "error: " + p.error if p.error else "ok"
            print(f"{p.name}: {state}")
        print(f"{len(manifest.pages)} page(s), {failed} failed")
    return EXIT_PARTIAL if failed else EXIT_OK


def _pairs_by_ref(pred, gt, ref_of, what: str):
    pred_by = {ref_of(p): p for p in pred}
    gt_by = {ref_of(g): g for g in gt}
    if len(pred_by) != len(pred) or len(gt_by) != len(gt):
        raise SchemaError("/", f"duplicate {what} references")
    if set(pred_by) != set(gt_by):
        missing = sorted(set(gt_by) - set(pred_by))
        extra = sorted(set(pred_by) - set(gt_by))
        raise SchemaError("/", f"{what} sets differ (missing {missing}, extra {extra})")
    return [(pred_by[r], gt_by[r]) for r in sorted(pred_by)]


def _eval_detection(args) -> dict:
    strict = not args.lenient
    pred = load_page_annotations(args.pred, strict=strict)
    gt = load_page_annotations(args.gt, strict=strict)
    totals = {k: [0, 0, 0] for k in NodeKind}
    for p, g in _pairs_by_ref(pred, gt, lambda x: x.image_ref, "page"):
        result = detection_eval(p.nodes, g.nodes, iou_thresh=args.iou_thresh)
        for kind, counts in result.per_kind.items():
            totals[kind][0] += counts.tp
            totals[kind][1] += counts.fp
            totals[kind][2] += counts.fn
    pooled = DetectionEvalResult(per_kind={k: PrfCounts(*v) for k, v in totals.items()})
    return detection_report(pooled, params={"iou_thresh": args.iou_thresh,
                                            "pages": len(pred)})


def _eval_clustering(args) -> dict:
    strict = not args.lenient
    pred = load_page_annotations(args.pred, strict=strict)
    gt = load_page_annotations(args.gt, strict=strict)
    per_page = []
    for p, g in _pairs_by_ref(pred, gt, lambda x: x.image_ref, "page"):
        if len(p.cluster_labels) != len(g.cluster_labels):
            raise SchemaError("/", f"page {p.image_ref}: character counts differ")
        if p.cluster_labels:
            per_page.append(ami(p.cluster_labels, g.cluster_labels))
    return clustering_report(per_page, params={"pages": len(pred)})


def _eval_association(args) -> dict:
    strict = not args.lenient
    pred = load_page_annotations(args.pred, strict=strict)
    gt = load_page_annotations(args.gt, strict=strict)
    tc_scores, tt_scores = [], []
    for p, g in _pairs_by_ref(pred, gt, lambda x: x.image_ref, "page"):
        if p.edge_scores is None:
            raise SchemaError("/", f"page {p.image_ref}: predictions carry no edge_scores")
        tc = p.edge_scores.text_char
        candidates = [((t, c), float(tc[t, c]))
                      for t in range(tc.shape[0]) for c in range(tc.shape[1])]
        tc_scores.append(association_ap(candidates, set(map(tuple, g.edges["text_char"]))))
        tt = p.edge_scores.text_tail
        candidates = [((t, u), float(tt[t, u]))
                      for t in range(tt.shape[0]) for u in range(tt.shape[1])]
        tt_scores.append(association_ap(candidates, set(map(tuple, g.edges["text_tail"]))))
    n = max(len(tc_scores), 1)
    return association_report(sum(tc_scores) / n, sum(tt_scores) / n,
                              params={"pages": len(pred)},
                              details={"text_char_per_page": tc_scores,
                                       "text_tail_per_page": tt_scores})


def _eval_grounding(args) -> dict:
    strict = not args.lenient
    pred = load_caption_annotations(args.pred, strict=strict)
    gt = load_caption_annotations(args.gt, strict=strict)
    tp = fp = fn = 0
    per_panel = []
    for p, g in _pairs_by_ref(pred, gt, lambda x: x.panel_image_ref, "panel"):
        r = grounding_eval(p.to_grounded_caption(), g.to_grounded_caption(),
                           iou_thresh=args.iou_thresh)
        tp += r.counts.tp
        fp += r.counts.fp
        fn += r.counts.fn
        per_panel.append({"panel": p.panel_image_ref, "f1": r.f1,
                          "precision": r.precision, "recall": r.recall})
    pooled = PrfCounts(tp=tp, fp=fp, fn=fn)
    return grounding_report(None, pooled={
        "F1 Score": pooled.f1, "Precision": pooled.precision, "Recall": pooled.recall,
        "tp": tp, "fp": fp, "fn": fn,
    }, params={"iou_thresh": args.iou_thresh, "panels": len(pred)},
        details={"per_panel": per_panel})


def _eval_judge(args) -> dict:
    summary = judge_summarize(load_verdicts(args.pred))
    return judge_report(summary)


def _cmd_eval(args) -> int:
    if args.kind != "judge" and not args.gt:
        print(f"error: eval {args.kind} requires --gt", file=sys.stderr)
        return EXIT_USAGE
    dispatch = {
        "detection": _eval_detection,
        "clustering": _eval_clustering,
        "association": _eval_association,
        "grounding": _eval_grounding,
        "judge": _eval_judge,
    }
    try:
        report = dispatch[args.kind](args)
    except SchemaError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    paths = write_report_files(report, args.out, figures=not args.no_figures)
    if args.json:
        print(report_to_json(report), end="")
    else:
        print(format_table(report))
        print("wrote: " + ", ".join(str(p) for p in paths))
    return EXIT_OK


def write_report_files(report: dict, out_base, figures: bool = True) -> list[Path]:
    out_base = Path(out_base)
    out_base.parent.mkdir(parents=True, exist_ok=True)
    paths = [out_base.with_suffix(".json"), out_base.with_suffix(".csv")]
    paths[0].write_text(report_to_json(report), encoding="utf-8")
    paths[1].write_text(report_to_csv(report), encoding="utf-8")
    if figures:
        png = out_base.with_suffix(".png")
        render_report_figure(report, png)
        paths.append(png)
    return paths


def _cmd_mock_serve(args) -> int:
    try:
        server = MockServer(args.fixture_dir, port=args.port, delay=args.delay)
    except (FixtureError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    print(f"mock server listening on {server.base_url} (Ctrl-C to stop)")
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
    return EXIT_OK


def _cmd_decode(args) -> int:
    if args.tokens_file:
        raw = Path(args.tokens_file).read_text(encoding="utf-8")
    else:
        raw = sys.stdin.read()
    if args.task == "pregrounded":
        pg = parse_pregrounded(raw)
        doc = {
            "text": pg.text,
            "phrases": [{"phrase": p.phrase, "id": p.ref_id} for p in pg.phrases],
            "warnings": list(pg.warnings),
        }
        print(json.dumps(doc, ensure_ascii=False, indent=2))
        return EXIT_OK
    tokens = raw.split()
    try:
        if args.task == "detect":
            records = parse_detection(tokens)
            doc = [{"kind": r.kind.value, "box": list(r.box.as_tuple()), "order": r.order_index}
                   for r in records]
        elif args.task == "ocr":
            doc = [{"text": r.text, "box": list(r.box.as_tuple()), "order": r.order_index}
                   for r in parse_ocr(tokens)]
        else:
            gc = parse_grounded_caption(tokens)
            doc = {
                "caption": gc.text,
                "phrases": [{"phrase": p.phrase, "boxes": [list(b.as_tuple()) for b in p.boxes]}
                            for p in gc.phrase_segments],
            }
    except ParseError as e:
        print(f"parse error at token {e.index}: {e.reason}", file=sys.stderr)
        return EXIT_PARTIAL
    print(json.dumps(doc, ensure_ascii=False, indent=2))
    return EXIT_OK


def _cmd_fixtures_gen(args) -> int:
    dest = Path(args.dest)
    fixtures.generate(dest)
    if args.contract_corpus:
        fixtures.generate_contract_corpus(Path(args.contract_corpus))
    print(f"fixtures written to {dest}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.cmd == "run":
            return _cmd_run(args)
        if args.cmd == "eval":
            return _cmd_eval(args)
        if args.cmd == "mock-serve":
            return _cmd_mock_serve(args)
        if args.cmd == "decode":
            return _cmd_decode(args)
        if args.cmd == "fixtures-gen":
            return _cmd_fixtures_gen(args)
    except BrokenPipeError:
        return EXIT_PARTIAL
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
