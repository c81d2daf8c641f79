"""Deterministic synthetic fixtures: one golden page, its mock-server
responses, golden pipeline outputs, annotation files and the protocol
contract corpus.

Everything derives from a hand-designed 800x1200 page with four panels,
five character boxes (three identities), six texts and four bubble tails.
No licensed artwork is involved; the page is drawn from rectangles.
"""

from __future__ import annotations

import base64
import io
import json
from pathlib import Path

from PIL import Image, ImageDraw

from .client import encode_scores
from .dataset_io import (
    CaptionAnnotation,
    NodeAnnotation,
    PageAnnotation,
    caption_annotations_to_json,
    page_annotations_to_json,
)
from .geometry import BBox, ImageDims, dequantize, quantize
from .mock_server import fixture_key
from .page_graph import ScoreTable
from .pipeline import crop_panel
from .prompts import NarrativeStyle, PanelRecord, prose_prompt
from .tokens import (
    DetectionRecord,
    GroundedCaption,
    NodeKind,
    OcrRecord,
    PhraseSegment,
    PlainSegment,
    serialize_detection,
    serialize_grounded_caption,
    serialize_ocr,
)
from .transcript import TranscriptLine, render_panel_dialogues, transcript_to_json

PAGE_W, PAGE_H = 800, 1200
PAGE_DIMS = ImageDims(PAGE_W, PAGE_H)
PAGE_NAME = "page_001"

PANELS = [
    (410, 10, 790, 590),     # top-right
    (10, 10, 390, 590),      # top-left
    (410, 610, 790, 1190),   # bottom-right
    (10, 610, 390, 1190),    # bottom-left
]
CHARS = [
    (620, 160, 740, 430),    # ch0, identity A, panel 0
    (450, 150, 570, 420),    # ch1, identity B, panel 0
    (60, 150, 200, 450),     # ch2, identity C, panel 1
    (450, 700, 600, 1000),   # ch3, identity B, panel 2
    (100, 700, 240, 1010),   # ch4, identity A, panel 3
]
TEXTS = [
    (600, 40, 780, 120),
    (430, 40, 580, 115),
    (220, 60, 370, 140),
    (620, 640, 780, 720),
    (250, 640, 380, 715),
    (30, 630, 200, 700),
]
TAILS = [
    (585, 115, 610, 150),
    (470, 110, 495, 145),
    (230, 135, 255, 170),
    (640, 715, 665, 750),
]

TEXT_STRINGS = [
    "Did you finish the job?",
    "Almost. One loose end.",
    "You two are late again!",
    "The loose end is you.",
    "Enough. We move at dawn.",
    "Rain hammered the tin roof.",
]

# identity A = {ch0, ch4}, B = {ch1, ch3}, C = {ch2}
CLUSTER_LABELS = [0, 1, 2, 1, 0]
CHAR_CHAR_EDGES = [(0, 4), (1, 3)]
TEXT_CHAR_EDGES = [(0, 0), (1, 1), (2, 2), (3, 3), (4, 4)]  # t5 is narration
TEXT_TAIL_EDGES = [(0, 0), (1, 1), (2, 2), (3, 3)]
TEXT_PANEL = [0, 0, 1, 2, 3, 3]
SPEAKERS = ["Aiko", "Boru", "C2", "Boru", "Aiko", "UNKNOWN"]

NAME_MAP = {0: "Aiko", 1: "Boru"}

CAPTIONS = [
    "Two men in dark coats face each other across a cramped office.",
    "A woman with short hair points sharply toward the doorway.",
    "The taller man leans over a desk and grips a thin folder.",
    "An older man stands by a rain-streaked window, arms folded.",
]
# panel -> (phrase, char indices it grounds to)
GROUNDED_PHRASES = [
    ("Two men", [0, 1]),
    ("A woman", [2]),
    ("The taller man", [3]),
    ("An older man", [4]),
]

PROSE_TEXT = (
    "Rain taps at the windows of a cramped office where Aiko and Boru stand "
    "face to face, coats still damp. Aiko asks whether the job is finished; "
    "Boru admits one loose end remains. From the next room, a sharp-eyed "
    "woman leans through the doorway and scolds the pair for being late "
    "again. Boru bends over the desk, voice low, and says the loose end is "
    "Aiko. Unmoved, Aiko folds both arms and declares they move at dawn, "
    "while rain hammers the tin roof."
)

SCREENPLAY_TEXT = (
    "INT. CRAMPED OFFICE - DAY\n\n"
    "Rain streaks the windows. AIKO and BORU face each other in damp coats.\n\n"
    "AIKO\nDid you finish the job?\n\n"
    "BORU\nAlmost. One loose end.\n\n"
    "A sharp-eyed WOMAN leans through the doorway.\n\n"
    "WOMAN\nYou two are late again!\n\n"
    "Boru bends over the desk, voice low.\n\n"
    "BORU\nThe loose end is you.\n\n"
    "AIKO\nEnough. We move at dawn.\n\n"
    "Rain hammers the tin roof."
)

VERDICT_ROWS = [
    ("gpt-4", 3.63, "Captures most key elements with minor drift."),
    ("gemini-1.5", 3.43, "Partially accurate with some detail slips."),
    ("llama3", 4.09, "Mostly accurate retelling."),
    ("gemma2", 3.49, "Conveys the idea, misses several specifics."),
]

# Emission order over all nodes, hand-fixed in reading order.
_EMISSION = [
    ("panel", 0), ("text", 0), ("text", 1), ("tail", 0), ("tail", 1),
    ("char", 0), ("char", 1),
    ("panel", 1), ("text", 2), ("tail", 2), ("char", 2),
    ("panel", 2), ("text", 3), ("tail", 3), ("char", 3),
    ("panel", 3), ("text", 4), ("text", 5), ("char", 4),
]

_BY_KIND = {
    "panel": (NodeKind.PANEL, PANELS),
    "char": (NodeKind.CHARACTER, CHARS),
    "text": (NodeKind.TEXT, TEXTS),
    "tail": (NodeKind.TAIL, TAILS),
}


def detection_records() -> list[DetectionRecord]:
    records = []
    for i, (kind_name, idx) in enumerate(_EMISSION):
        kind, boxes = _BY_KIND[kind_name]
        box = BBox(*map(float, boxes[idx]))
        records.append(DetectionRecord(quantize(box, PAGE_DIMS), kind, i))
    return records


def score_table() -> ScoreTable:
    tc = [[0.1] * len(CHARS) for _ in TEXTS]
    for t, c in TEXT_CHAR_EDGES:
        tc[t][c] = 0.95 - 0.02 * t
    for c in range(len(CHARS)):
        tc[5][c] = 0.15
    cc = [[0.05] * len(CHARS) for _ in CHARS]
    for i in range(len(CHARS)):
        cc[i][i] = 1.0
    for a, b in CHAR_CHAR_EDGES:
        cc[a][b] = cc[b][a] = 0.9
    tt = [[0.02] * len(TAILS) for _ in TEXTS]
    for t, u in TEXT_TAIL_EDGES:
        tt[t][u] = 0.97 - 0.01 * t
    return ScoreTable(tc, cc, tt, len(TEXTS), len(CHARS), len(TAILS))


def ocr_records() -> list[OcrRecord]:
    records = []
    for i, (text, box) in enumerate(zip(TEXT_STRINGS, TEXTS)):
        x0, y0, x1, y1 = box
        jittered = BBox(x0 + 2.0, y0 + 1.0, x1 - 2.0, y1 - 1.0)
        records.append(OcrRecord(text, quantize(jittered, PAGE_DIMS), i))
    return records


def node_boxes() -> dict[str, list[BBox]]:
    """Page-frame boxes exactly as the engine will see them (dequantized)."""
    out: dict[str, list[BBox]] = {k: [] for k in _BY_KIND}
    for kind_name, idx in _EMISSION:
        _, boxes = _BY_KIND[kind_name]
        q = quantize(BBox(*map(float, boxes[idx])), PAGE_DIMS)
        out[kind_name].append(dequantize(q, PAGE_DIMS))
    return out


def draw_page() -> Image.Image:
    img = Image.new("RGB", (PAGE_W, PAGE_H), "white")
    d = ImageDraw.Draw(img)
    for box in PANELS:
        d.rectangle(box, outline="black", width=4)
    for box in CHARS:
        d.ellipse(box, outline="black", fill=(210, 210, 210), width=3)
    for box in TEXTS:
        d.rectangle(box, outline="black", fill="white", width=2)
        x0, y0, x1, y1 = box
        for k, ly in enumerate(range(y0 + 12, y1 - 8, 18)):
            d.line((x0 + 10, ly, x1 - 10 - (k % 3) * 14, ly), fill=(80, 80, 80), width=3)
    for x0, y0, x1, y1 in TAILS:
        d.polygon([(x0, y0), (x1, y0), ((x0 + x1) // 2, y1)], outline="black", fill="white")
    return img


def page_png_bytes() -> bytes:
    buf = io.BytesIO()
    draw_page().save(buf, format="PNG")
    return buf.getvalue()


def panel_crops(image: Image.Image) -> list[tuple[bytes, tuple[int, int], ImageDims]]:
    return [crop_panel(image, box) for box in node_boxes()["panel"]]


def grounded_caption_for_panel(panel_idx: int) -> GroundedCaption:
    """Panel caption with its character phrase grounded in panel-local bins."""
    phrase, char_ids = GROUNDED_PHRASES[panel_idx]
    caption = CAPTIONS[panel_idx]
    start = caption.index(phrase)
    boxes = node_boxes()
    image = draw_page()
    _, origin, crop_dims = panel_crops(image)[panel_idx]
    quads = []
    for ci in char_ids:
        page_box = boxes["char"][ci]
        local = page_box.translate(-origin[0], -origin[1])
        local = BBox(
            max(local.x_min, 0.0), max(local.y_min, 0.0),
            min(local.x_max, crop_dims.width), min(local.y_max, crop_dims.height),
        )
        quads.append(quantize(local, crop_dims))
    segments = []
    if start > 0:
        segments.append(PlainSegment(caption[:start]))
    segments.append(PhraseSegment(phrase, tuple(quads)))
    segments.append(PlainSegment(caption[start + len(phrase):]))
    return GroundedCaption(tuple(segments))


def golden_transcript_lines() -> list[TranscriptLine]:
    return [
        TranscriptLine(speaker_label=SPEAKERS[i], text=TEXT_STRINGS[i],
                       panel_order=TEXT_PANEL[i], line_order=i)
        for i in range(len(TEXT_STRINGS))
    ]


def golden_prose_prompt(style: NarrativeStyle = NarrativeStyle.PROSE) -> str:
    lines = golden_transcript_lines()
    panels = [
        PanelRecord(panel_order=i + 1, caption=CAPTIONS[i],
                    dialogues=render_panel_dialogues(lines, i))
        for i in range(len(PANELS))
    ]
    return prose_prompt(panels, style)


def page_annotation(with_scores: bool = True) -> PageAnnotation:
    nodes = []
    for kind_name, idx in _EMISSION:
        kind, boxes = _BY_KIND[kind_name]
        nodes.append(NodeAnnotation(kind, BBox(*map(float, boxes[idx]))))
    return PageAnnotation(
        image_ref=f"{PAGE_NAME}.png",
        dims=PAGE_DIMS,
        nodes=nodes,
        edges={
            "text_char": list(TEXT_CHAR_EDGES),
            "char_char": list(CHAR_CHAR_EDGES),
            "text_tail": list(TEXT_TAIL_EDGES),
        },
        cluster_labels=list(CLUSTER_LABELS),
        texts=list(TEXT_STRINGS),
        edge_scores=score_table() if with_scores else None,
    )


def caption_annotations() -> list[CaptionAnnotation]:
    return [
        CaptionAnnotation.from_grounded_caption(
            grounded_caption_for_panel(i), f"{PAGE_NAME}_panel_{i}.png")
        for i in range(len(PANELS))
    ]


def verdicts_doc() -> dict:
    return {
        "schema_version": "mangapipe/verdicts-v1",
        "verdicts": [
            {"judge": judge, "score": score, "judgement": judgement}
            for judge, score, judgement in VERDICT_ROWS
        ],
    }


def _json_bytes(doc) -> bytes:
    return (json.dumps(doc, ensure_ascii=False, indent=2, sort_keys=True) + "\n").encode("utf-8")


def generate(dest: Path) -> None:
    """Write the complete fixture tree under `dest` (idempotent)."""
    dest = Path(dest)
    (dest / "pages").mkdir(parents=True, exist_ok=True)
    (dest / "mock").mkdir(parents=True, exist_ok=True)
    (dest / "goldens").mkdir(parents=True, exist_ok=True)
    (dest / "annotations").mkdir(parents=True, exist_ok=True)

    png = page_png_bytes()
    (dest / "pages" / f"{PAGE_NAME}.png").write_bytes(png)

    image = draw_page()
    crops = panel_crops(image)

    responses = []

    def add_response(task: str, key: str, filename: str, body: dict) -> None:
        (dest / "mock" / filename).write_bytes(_json_bytes(body))
        responses.append({"task": task, "key": key, "file": filename})

    add_response("detect", fixture_key(png), "detect_page.json", {
        "tokens": serialize_detection(detection_records()),
        "scores": encode_scores(score_table()),
    })
    add_response("ocr", fixture_key(png), "ocr_page.json", {
        "tokens": serialize_ocr(ocr_records()),
    })
    for i, (crop_bytes, _, _) in enumerate(crops):
        add_response("ground", fixture_key(crop_bytes), f"ground_panel_{i}.json", {
            "tokens": serialize_grounded_caption(grounded_caption_for_panel(i)),
        })
        add_response("chat", fixture_key(crop_bytes), f"caption_panel_{i}.json", {
            "text": CAPTIONS[i],
        })
    prompt = golden_prose_prompt()
    add_response("chat", fixture_key(None, prompt), "prose_page.json", {"text": PROSE_TEXT})
    screenplay_prompt = golden_prose_prompt(NarrativeStyle.SCREENPLAY)
    add_response("chat", fixture_key(None, screenplay_prompt), "prose_page_screenplay.json",
                 {"text": SCREENPLAY_TEXT})

    (dest / "mock" / "manifest.json").write_bytes(_json_bytes({
        "version": 1,
        "responses": responses,
    }))

    (dest / "goldens" / "transcript.json").write_text(
        transcript_to_json(golden_transcript_lines()), encoding="utf-8")
    (dest / "goldens" / "prose_prompt.txt").write_text(prompt, encoding="utf-8")
    (dest / "goldens" / "prose.txt").write_text(PROSE_TEXT, encoding="utf-8")

    annotations = page_annotations_to_json([page_annotation()])
    (dest / "annotations" / "pages_gt.json").write_text(annotations, encoding="utf-8")
    (dest / "annotations" / "pages_pred.json").write_text(annotations, encoding="utf-8")
    captions = caption_annotations_to_json(caption_annotations())
    (dest / "annotations" / "captions_gt.json").write_text(captions, encoding="utf-8")
    (dest / "annotations" / "captions_pred.json").write_text(captions, encoding="utf-8")
    (dest / "annotations" / "verdicts.json").write_bytes(_json_bytes(verdicts_doc()))

    (dest / "name_map.json").write_bytes(_json_bytes({str(k): v for k, v in NAME_MAP.items()}))


# ---------------------------------------------------------------------------
# protocol contract corpus, shared between the mock server and the bridge


def contract_image_bytes() -> bytes:
    img = Image.new("RGB", (64, 48), "white")
    d = ImageDraw.Draw(img)
    d.rectangle((4, 4, 59, 43), outline="black", width=2)
    d.ellipse((10, 12, 28, 38), outline="black", fill=(200, 200, 200))
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


CONTRACT_CAPTION = "a boy waves at a girl"


def contract_corpus() -> dict:
    image_b64 = base64.b64encode(contract_image_bytes()).decode("ascii")
    infer_body = {"image": "$IMAGE", "width": "$WIDTH", "height": "$HEIGHT"}
    cases = [
        {"name": "health_descriptor", "method": "GET", "path": "/v1/health",
         "expect": {"status": 200, "health_descriptor": True}},
        {"name": "detect_ok", "method": "POST", "path": "/v1/detect", "body": infer_body,
         "expect": {"status": 200, "tokens_grammar": "detect", "scores_match_tokens": True}},
        {"name": "ocr_ok", "method": "POST", "path": "/v1/ocr", "body": infer_body,
         "expect": {"status": 200, "tokens_grammar": "ocr"}},
        {"name": "ground_ok", "method": "POST", "path": "/v1/ground",
         "body": {**infer_body, "caption": "$CAPTION"},
         "expect": {"status": 200, "tokens_grammar": "ground"}},
        {"name": "ground_missing_caption", "method": "POST", "path": "/v1/ground",
         "body": infer_body,
         "expect": {"status": 400, "error_code": "invalid_request"}},
        {"name": "detect_missing_image", "method": "POST", "path": "/v1/detect",
         "body": {"width": "$WIDTH", "height": "$HEIGHT"},
         "expect": {"status": 400, "error_code": "invalid_request"}},
        {"name": "detect_bad_base64", "method": "POST", "path": "/v1/detect",
         "body": {"image": "!!not-base64!!", "width": "$WIDTH", "height": "$HEIGHT"},
         "expect": {"status": 400, "error_code": "invalid_request"}},
        {"name": "detect_negative_width", "method": "POST", "path": "/v1/detect",
         "body": {"image": "$IMAGE", "width": -5, "height": "$HEIGHT"},
         "expect": {"status": 400, "error_code": "invalid_request"}},
        {"name": "detect_unknown_field", "method": "POST", "path": "/v1/detect",
         "body": {**infer_body, "mystery": 1},
         "expect": {"status": 400, "error_code": "invalid_request"}},
        {"name": "caption_on_detect", "method": "POST", "path": "/v1/detect",
         "body": {**infer_body, "caption": "nope"},
         "expect": {"status": 400, "error_code": "invalid_request"}},
        {"name": "unknown_endpoint", "method": "POST", "path": "/v1/bogus", "body": {},
         "expect": {"status": 404, "error_code": "not_found"}},
        {"name": "malformed_json", "method": "POST", "path": "/v1/detect",
         "raw_body": "{not json",
         "expect": {"status": 400, "error_code": "invalid_request"}},
    ]
    return {
        "version": 1,
        "image_b64": image_b64,
        "width": 64,
        "height": 48,
        "caption": CONTRACT_CAPTION,
        "cases": cases,
    }


def substitute_case_body(body, corpus: dict):
    """Expand $IMAGE / $WIDTH / $HEIGHT / $CAPTION placeholders."""
    subst = {"$IMAGE": corpus["image_b64"], "$WIDTH": corpus["width"],
             "$HEIGHT": corpus["height"], "$CAPTION": corpus["caption"]}
    if isinstance(body, dict):
        return {k: substitute_case_body(v, corpus) for k, v in body.items()}
    if isinstance(body, str) and body in subst:
        return subst[body]
    return body


def contract_fixture_responses() -> list[tuple[str, dict]]:
    """Canned mock responses for the corpus image: one simple page."""
    dims = ImageDims(64, 48)
    char = quantize(BBox(10.0, 12.0, 28.0, 38.0), dims)
    text = quantize(BBox(34.0, 8.0, 58.0, 20.0), dims)
    panel = quantize(BBox(4.0, 4.0, 59.0, 43.0), dims)
    tail = quantize(BBox(36.0, 20.0, 42.0, 26.0), dims)
    records = [
        DetectionRecord(panel, NodeKind.PANEL, 0),
        DetectionRecord(text, NodeKind.TEXT, 1),
        DetectionRecord(tail, NodeKind.TAIL, 2),
        DetectionRecord(char, NodeKind.CHARACTER, 3),
    ]
    scores = ScoreTable([[0.9]], [[1.0]], [[0.8]], 1, 1, 1)
    grounded = GroundedCaption((
        PhraseSegment("a boy", (char,)),
        PlainSegment(" waves at a girl"),
    ))
    return [
        ("detect", {"tokens": serialize_detection(records), "scores": encode_scores(scores)}),
        ("ocr", {"tokens": serialize_ocr([OcrRecord("Hi there!", text, 0)])}),
        ("ground", {"tokens": serialize_grounded_caption(grounded)}),
    ]


def generate_contract_fixture_dir(dest: Path) -> None:
    """Mock fixture dir answering the contract corpus requests."""
    dest = Path(dest)
    dest.mkdir(parents=True, exist_ok=True)
    key = fixture_key(contract_image_bytes())
    responses = []
    for task, body in contract_fixture_responses():
        filename = f"{task}_contract.json"
        (dest / filename).write_bytes(_json_bytes(body))
        responses.append({"task": task, "key": key, "file": filename})
    (dest / "manifest.json").write_bytes(_json_bytes({"version": 1, "responses": responses}))


def generate_contract_corpus(path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(_json_bytes(contract_corpus()))
