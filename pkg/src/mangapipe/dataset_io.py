"""On-disk formats: page annotations, grounded-caption annotations and the
run manifest.

All three are versioned JSON documents.  Loading validates every invariant
and reports violations with a JSON-pointer-style location; saving emits a
canonical form (sorted keys, two-space indent, trailing newline) so that
load -> save is idempotent and byte-stable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .geometry import BBox, GeometryError, ImageDims, QuantizedBox
from .page_graph import ScoreTable
from .tokens import GroundedCaption, NodeKind, PhraseSegment, PlainSegment

ANNOTATIONS_SCHEMA = "mangapipe/annotations-v1"
CAPTIONS_SCHEMA = "mangapipe/captions-v1"
MANIFEST_SCHEMA = "mangapipe/manifest-v1"
VERDICTS_SCHEMA = "mangapipe/verdicts-v1"

STAGES = ("detected", "ocr", "captioned", "grounded", "prose")

EDGE_KINDS = ("text_char", "char_char", "text_tail")


class SchemaError(ValueError):
    """Schema violation at a JSON-pointer-style location."""

    def __init__(self, pointer: str, message: str):
        self.pointer = pointer
        super().__init__(f"{pointer}: {message}")


def _canonical_json(doc) -> str:
    return json.dumps(doc, ensure_ascii=False, indent=2, sort_keys=True) + "\n"


def _require(cond: bool, pointer: str, message: str) -> None:
    if not cond:
        raise SchemaError(pointer, message)


def _check_fields(obj: dict, known: set[str], required: set[str], pointer: str,
                  strict: bool, warnings: list[str]) -> None:
    for k in required:
        _require(k in obj, pointer, f"missing required field {k!r}")
    unknown = set(obj) - known
    if unknown:
        msg = f"unknown fields: {sorted(unknown)}"
        if strict:
            raise SchemaError(pointer, msg)
        warnings.append(f"{pointer}: {msg}")


@dataclass(frozen=True)
class NodeAnnotation:
    kind: NodeKind
    box: BBox


@dataclass(frozen=True)
class PageAnnotation:
    """Ground-truth (or predicted) structure of one page."""

    image_ref: str
    dims: ImageDims
    nodes: list[NodeAnnotation]
    edges: dict[str, list[tuple[int, int]]]
    cluster_labels: list[int]
    texts: list[str]
    image_hash: str | None = None
    edge_scores: ScoreTable | None = field(default=None, compare=False)

    def nodes_of(self, kind: NodeKind) -> list[NodeAnnotation]:
        return [n for n in self.nodes if n.kind is kind]

    def count(self, kind: NodeKind) -> int:
        return sum(1 for n in self.nodes if n.kind is kind)


def _parse_box(values, pointer: str) -> BBox:
    _require(isinstance(values, list) and len(values) == 4, pointer, "box must be [x0, y0, x1, y1]")
    try:
        return BBox(*(float(v) for v in values))
    except (TypeError, ValueError, GeometryError) as e:
        raise SchemaError(pointer, f"invalid box: {e}") from None


def _parse_quant_box(values, pointer: str) -> QuantizedBox:
    _require(isinstance(values, list) and len(values) == 4, pointer, "box must be 4 bin indices")
    try:
        return QuantizedBox(*(int(v) for v in values))
    except (TypeError, ValueError, GeometryError) as e:
        raise SchemaError(pointer, f"invalid quantized box: {e}") from None


def _parse_score_block(obj, shape: tuple[int, int], pointer: str):
    _require(isinstance(obj, dict), pointer, "must be an object with shape and data")
    _require(list(obj.get("shape", [])) == list(shape), f"{pointer}/shape",
             f"expected shape {list(shape)}, got {obj.get('shape')!r}")
    data = obj.get("data")
    _require(isinstance(data, list) and len(data) == shape[0] * shape[1],
             f"{pointer}/data", f"expected {shape[0] * shape[1]} entries")
    return [data[i * shape[1]:(i + 1) * shape[1]] for i in range(shape[0])]


_KIND_BY_NAME = {k.value: k for k in NodeKind}


def _page_from_obj(obj: dict, pointer: str, strict: bool, warnings: list[str]) -> PageAnnotation:
    _check_fields(
        obj,
        known={"image_ref", "image_hash", "width", "height", "nodes", "edges",
               "cluster_labels", "texts", "edge_scores"},
        required={"image_ref", "width", "height", "nodes", "edges", "cluster_labels", "texts"},
        pointer=pointer, strict=strict, warnings=warnings,
    )
    try:
        dims = ImageDims(int(obj["width"]), int(obj["height"]))
    except (TypeError, ValueError, GeometryError) as e:
        raise SchemaError(pointer, f"invalid dims: {e}") from None

    nodes = []
    _require(isinstance(obj["nodes"], list), f"{pointer}/nodes", "must be a list")
    for i, nd in enumerate(obj["nodes"]):
        np_ = f"{pointer}/nodes/{i}"
        _require(isinstance(nd, dict), np_, "must be an object")
        _check_fields(nd, known={"kind", "box"}, required={"kind", "box"},
                      pointer=np_, strict=strict, warnings=warnings)
        kind = _KIND_BY_NAME.get(nd["kind"])
        _require(kind is not None, f"{np_}/kind", f"unknown node kind {nd['kind']!r}")
        nodes.append(NodeAnnotation(kind, _parse_box(nd["box"], f"{np_}/box")))

    counts = {k: sum(1 for n in nodes if n.kind is k) for k in NodeKind}
    side_counts = {
        "text_char": (counts[NodeKind.TEXT], counts[NodeKind.CHARACTER]),
        "char_char": (counts[NodeKind.CHARACTER], counts[NodeKind.CHARACTER]),
        "text_tail": (counts[NodeKind.TEXT], counts[NodeKind.TAIL]),
    }
    edges: dict[str, list[tuple[int, int]]] = {}
    _require(isinstance(obj["edges"], dict), f"{pointer}/edges", "must be an object")
    _check_fields(obj["edges"], known=set(EDGE_KINDS), required=set(EDGE_KINDS),
                  pointer=f"{pointer}/edges", strict=strict, warnings=warnings)
    for kind_name in EDGE_KINDS:
        lo, hi = side_counts[kind_name]
        pairs = []
        for i, pair in enumerate(obj["edges"][kind_name]):
            ep = f"{pointer}/edges/{kind_name}/{i}"
            _require(isinstance(pair, list) and len(pair) == 2, ep, "edge must be [left, right]")
            a, b = int(pair[0]), int(pair[1])
            _require(0 <= a < lo, ep, f"left index {a} out of range [0, {lo})")
            _require(0 <= b < hi, ep, f"right index {b} out of range [0, {hi})")
            pairs.append((a, b))
        edges[kind_name] = pairs

    labels = obj["cluster_labels"]
    lp = f"{pointer}/cluster_labels"
    _require(isinstance(labels, list) and len(labels) == counts[NodeKind.CHARACTER],
             lp, f"must list one label per character ({counts[NodeKind.CHARACTER]})")
    for i, l in enumerate(labels):
        _require(isinstance(l, int) and not isinstance(l, bool) and l >= 0,
                 f"{lp}/{i}", f"label must be a nonnegative int, got {l!r}")

    texts = obj["texts"]
    tp = f"{pointer}/texts"
    _require(isinstance(texts, list) and len(texts) == counts[NodeKind.TEXT],
             tp, f"must list one string per text node ({counts[NodeKind.TEXT]})")
    for i, t in enumerate(texts):
        _require(isinstance(t, str), f"{tp}/{i}", "must be a string")

    edge_scores = None
    if obj.get("edge_scores") is not None:
        es = obj["edge_scores"]
        sp = f"{pointer}/edge_scores"
        _require(isinstance(es, dict), sp, "must be an object")
        _check_fields(es, known=set(EDGE_KINDS), required=set(EDGE_KINDS),
                      pointer=sp, strict=strict, warnings=warnings)
        try:
            edge_scores = ScoreTable(
                _parse_score_block(es["text_char"], side_counts["text_char"], f"{sp}/text_char"),
                _parse_score_block(es["char_char"], side_counts["char_char"], f"{sp}/char_char"),
                _parse_score_block(es["text_tail"], side_counts["text_tail"], f"{sp}/text_tail"),
                counts[NodeKind.TEXT], counts[NodeKind.CHARACTER], counts[NodeKind.TAIL],
            )
        except ValueError as e:
            if isinstance(e, SchemaError):
                raise
            raise SchemaError(sp, str(e)) from None

    return PageAnnotation(
        image_ref=str(obj["image_ref"]),
        image_hash=obj.get("image_hash"),
        dims=dims, nodes=nodes, edges=edges,
        cluster_labels=[int(l) for l in labels],
        texts=[str(t) for t in texts],
        edge_scores=edge_scores,
    )


def load_page_annotations(path, strict: bool = True,
                          warnings: list[str] | None = None) -> list[PageAnnotation]:
    """Load and validate an annotations file; every invariant is enforced here."""
    warnings = warnings if warnings is not None else []
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise SchemaError("/", f"cannot read {path}: {e}") from None
    except json.JSONDecodeError as e:
        raise SchemaError("/", f"not valid JSON: {e}") from None
    _require(isinstance(doc, dict), "/", "document must be an object")
    _require(doc.get("schema_version") == ANNOTATIONS_SCHEMA, "/schema_version",
             f"expected {ANNOTATIONS_SCHEMA!r}, got {doc.get('schema_version')!r}")
    _check_fields(doc, known={"schema_version", "pages"}, required={"schema_version", "pages"},
                  pointer="/", strict=strict, warnings=warnings)
    _require(isinstance(doc["pages"], list), "/pages", "must be a list")
    return [_page_from_obj(p, f"/pages/{i}", strict, warnings) for i, p in enumerate(doc["pages"])]


def _score_block(matrix) -> dict:
    rows = [list(map(float, row)) for row in matrix]
    return {
        "shape": [len(rows), len(rows[0]) if rows else 0],
        "data": [v for row in rows for v in row],
    }


def page_annotations_to_json(pages: list[PageAnnotation]) -> str:
    out = []
    for p in pages:
        obj = {
            "image_ref": p.image_ref,
            "width": p.dims.width,
            "height": p.dims.height,
            "nodes": [{"kind": n.kind.value, "box": [n.box.x_min, n.box.y_min, n.box.x_max, n.box.y_max]}
                      for n in p.nodes],
            "edges": {k: [list(pair) for pair in p.edges.get(k, [])] for k in EDGE_KINDS},
            "cluster_labels": list(p.cluster_labels),
            "texts": list(p.texts),
        }
        if p.image_hash is not None:
            obj["image_hash"] = p.image_hash
        if p.edge_scores is not None:
            obj["edge_scores"] = {
                "text_char": _score_block(p.edge_scores.text_char),
                "char_char": _score_block(p.edge_scores.char_char),
                "text_tail": _score_block(p.edge_scores.text_tail),
            }
        out.append(obj)
    return _canonical_json({"schema_version": ANNOTATIONS_SCHEMA, "pages": out})


def save_page_annotations(pages: list[PageAnnotation], path) -> None:
    Path(path).write_text(page_annotations_to_json(pages), encoding="utf-8")


@dataclass(frozen=True)
class GroundedSpan:
    start: int
    end: int
    boxes: tuple[QuantizedBox, ...]


@dataclass(frozen=True)
class CaptionAnnotation:
    """A panel caption with character-phrase spans as char offsets.

    Offsets (not repeated substrings) disambiguate duplicate phrases.
    Spans are sorted, non-overlapping and carry at least one box each.
    """

    panel_image_ref: str
    caption: str
    spans: tuple[GroundedSpan, ...]

    def to_grounded_caption(self) -> GroundedCaption:
        segments: list[PlainSegment | PhraseSegment] = []
        cursor = 0
        for s in self.spans:
            if s.start > cursor:
                segments.append(PlainSegment(self.caption[cursor:s.start]))
            segments.append(PhraseSegment(self.caption[s.start:s.end], s.boxes))
            cursor = s.end
        if cursor < len(self.caption) or not segments:
            segments.append(PlainSegment(self.caption[cursor:]))
        return GroundedCaption(tuple(segments))

    @classmethod
    def from_grounded_caption(cls, gc: GroundedCaption, panel_image_ref: str) -> "CaptionAnnotation":
        spans = []
        cursor = 0
        for seg in gc.segments:
            if isinstance(seg, PhraseSegment):
                spans.append(GroundedSpan(cursor, cursor + len(seg.phrase), seg.boxes))
                cursor += len(seg.phrase)
            else:
                cursor += len(seg.text)
        return cls(panel_image_ref=panel_image_ref, caption=gc.text, spans=tuple(spans))


def _caption_from_obj(obj: dict, pointer: str, strict: bool, warnings: list[str]) -> CaptionAnnotation:
    _check_fields(obj, known={"panel_image_ref", "caption", "grounded_spans"},
                  required={"panel_image_ref", "caption", "grounded_spans"},
                  pointer=pointer, strict=strict, warnings=warnings)
    caption = obj["caption"]
    _require(isinstance(caption, str), f"{pointer}/caption", "must be a string")
    spans = []
    prev_end = 0
    for i, sp in enumerate(obj["grounded_spans"]):
        spp = f"{pointer}/grounded_spans/{i}"
        _check_fields(sp, known={"start", "end", "boxes"}, required={"start", "end", "boxes"},
                      pointer=spp, strict=strict, warnings=warnings)
        start, end = int(sp["start"]), int(sp["end"])
        _require(0 <= start < end <= len(caption), spp,
                 f"span [{start}, {end}) outside caption of length {len(caption)}")
        _require(start >= prev_end, spp, f"span [{start}, {end}) overlaps or precedes previous span")
        boxes = sp["boxes"]
        _require(isinstance(boxes, list) and len(boxes) >= 1, f"{spp}/boxes",
                 "every span needs at least one box")
        spans.append(GroundedSpan(start, end, tuple(
            _parse_quant_box(b, f"{spp}/boxes/{j}") for j, b in enumerate(boxes)
        )))
        prev_end = end
    return CaptionAnnotation(str(obj["panel_image_ref"]), caption, tuple(spans))


def load_caption_annotations(path, strict: bool = True,
                             warnings: list[str] | None = None) -> list[CaptionAnnotation]:
    warnings = warnings if warnings is not None else []
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise SchemaError("/", f"cannot read {path}: {e}") from None
    except json.JSONDecodeError as e:
        raise SchemaError("/", f"not valid JSON: {e}") from None
    _require(isinstance(doc, dict), "/", "document must be an object")
    _require(doc.get("schema_version") == CAPTIONS_SCHEMA, "/schema_version",
             f"expected {CAPTIONS_SCHEMA!r}, got {doc.get('schema_version')!r}")
    _check_fields(doc, known={"schema_version", "panels"}, required={"schema_version", "panels"},
                  pointer="/", strict=strict, warnings=warnings)
    return [_caption_from_obj(p, f"/panels/{i}", strict, warnings)
            for i, p in enumerate(doc["panels"])]


def caption_annotations_to_json(panels: list[CaptionAnnotation]) -> str:
    out = []
    for p in panels:
        out.append({
            "panel_image_ref": p.panel_image_ref,
            "caption": p.caption,
            "grounded_spans": [
                {"start": s.start, "end": s.end, "boxes": [list(b.as_tuple()) for b in s.boxes]}
                for s in p.spans
            ],
        })
    return _canonical_json({"schema_version": CAPTIONS_SCHEMA, "panels": out})


def save_caption_annotations(panels: list[CaptionAnnotation], path) -> None:
    Path(path).write_text(caption_annotations_to_json(panels), encoding="utf-8")


def load_verdicts(path) -> dict[str, list[float]]:
    """Judge scores grouped by judge name, from a verdicts file:
    {"schema_version": ..., "verdicts": [{"judge", "score", "judgement"?}]}."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise SchemaError("/", f"cannot read {path}: {e}") from None
    except json.JSONDecodeError as e:
        raise SchemaError("/", f"not valid JSON: {e}") from None
    _require(doc.get("schema_version") == VERDICTS_SCHEMA, "/schema_version",
             f"expected {VERDICTS_SCHEMA!r}, got {doc.get('schema_version')!r}")
    out: dict[str, list[float]] = {}
    for i, v in enumerate(doc.get("verdicts", [])):
        vp = f"/verdicts/{i}"
        _require(isinstance(v, dict), vp, "must be an object")
        judge = v.get("judge")
        _require(isinstance(judge, str) and judge, f"{vp}/judge", "must be a nonempty string")
        score = v.get("score")
        _require(isinstance(score, (int, float)) and not isinstance(score, bool),
                 f"{vp}/score", "must be numeric")
        _require(1.0 <= float(score) <= 5.0, f"{vp}/score", f"score {score} outside [1, 5]")
        out.setdefault(judge, []).append(float(score))
    return out


@dataclass
class PageStatus:
    name: str
    image_ref: str
    image_hash: str | None = None
    stages: dict[str, bool] = field(default_factory=lambda: {s: False for s in STAGES})
    artifacts: dict[str, str] = field(default_factory=dict)
    error: str | None = None

    def mark(self, stage: str) -> None:
        if stage not in STAGES:
            raise ValueError(f"unknown stage {stage!r}")
        self.stages[stage] = True
        self._check_monotone()

    def done(self, stage: str) -> bool:
        return bool(self.stages.get(stage))

    def _check_monotone(self) -> None:
        seen_false = False
        for s in STAGES:
            if self.stages.get(s):
                if seen_false:
                    raise ValueError(f"stage {s!r} done but an earlier stage is not: {self.stages}")
            else:
                seen_false = True


@dataclass
class RunManifest:
    """Per-run record of page progress, artifact paths and configuration."""

    config: dict
    tool_version: str
    pages: list[PageStatus] = field(default_factory=list)

    def page(self, name: str) -> PageStatus | None:
        return next((p for p in self.pages if p.name == name), None)

    def to_json(self) -> str:
        return _canonical_json({
            "schema_version": MANIFEST_SCHEMA,
            "tool_version": self.tool_version,
            "config": self.config,
            "pages": [
                {
                    "name": p.name,
                    "image_ref": p.image_ref,
                    "image_hash": p.image_hash,
                    "stages": {s: bool(p.stages.get(s)) for s in STAGES},
                    "artifacts": dict(sorted(p.artifacts.items())),
                    "error": p.error,
                }
                for p in self.pages
            ],
        })

    @classmethod
    def from_json(cls, raw: str) -> "RunManifest":
        doc = json.loads(raw)
        _require(doc.get("schema_version") == MANIFEST_SCHEMA, "/schema_version",
                 f"expected {MANIFEST_SCHEMA!r}, got {doc.get('schema_version')!r}")
        manifest = cls(config=doc.get("config", {}), tool_version=str(doc.get("tool_version", "")))
        for i, p in enumerate(doc.get("pages", [])):
            status = PageStatus(
                name=p["name"], image_ref=p.get("image_ref", ""),
                image_hash=p.get("image_hash"),
                stages={s: bool(p.get("stages", {}).get(s)) for s in STAGES},
                artifacts=dict(p.get("artifacts", {})),
                error=p.get("error"),
            )
            try:
                status._check_monotone()
            except ValueError as e:
                raise SchemaError(f"/pages/{i}/stages", str(e)) from None
            manifest.pages.append(status)
        return manifest

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "RunManifest":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))
