"""Page-to-prose pipeline: detect -> graph -> OCR -> transcript -> per-panel
captions -> grounding -> prose.

Each page keeps a raw model-output cache (state.json) next to its artifacts,
so re-running skips completed model calls and deterministically rebuilds the
derived artifacts byte-for-byte.  Per-page failures are isolated: the run
continues and the manifest records the error.
"""

from __future__ import annotations

import hashlib
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from PIL import Image

from . import client as mc
from .dataset_io import RunManifest, PageStatus
from .geometry import BBox, ImageDims
from .matching import (
    GROUNDING_LINK_MIN_IOU,
    OCR_RECONCILE_MIN_IOU,
    link_grounded,
    reconcile_ocr,
)
from .page_graph import PageGraph, Thresholds, build_page_graph
from .prompts import NarrativeStyle, PanelRecord, caption_prompt, prose_prompt
from .tokens import parse_detection, parse_grounded_caption, parse_ocr
from .transcript import (
    NameMap,
    generate_transcript,
    render_panel_dialogues,
    speaker_label,
    transcript_to_json,
)

TOOL_VERSION = "0.1.0"

# Panels are cropped with a small inward inset to avoid border art.
PANEL_INSET_PX = 2

CAPTIONS_SCHEMA = "mangapipe/page-captions-v1"
GROUNDED_SCHEMA = "mangapipe/page-grounded-v1"


@dataclass
class PipelineConfig:
    infer_url: str
    chat_url: str
    thresholds: Thresholds = field(default_factory=Thresholds)
    ocr_min_iou: float = OCR_RECONCILE_MIN_IOU
    grounding_min_iou: float = GROUNDING_LINK_MIN_IOU
    style: NarrativeStyle = NarrativeStyle.PROSE
    name_map: NameMap | None = None
    parallelism: int = 1
    timeout: float = mc.DEFAULT_TIMEOUT
    attempts: int = mc.DEFAULT_ATTEMPTS
    chat_key: str | None = None

    def __post_init__(self) -> None:
        for name in ("ocr_min_iou", "grounding_min_iou"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.parallelism < 1:
            raise ValueError(f"parallelism must be >= 1, got {self.parallelism}")

    def snapshot(self) -> dict:
        return {
            "thresholds": {
                "char_char": self.thresholds.char_char,
                "text_char": self.thresholds.text_char,
                "text_tail": self.thresholds.text_tail,
            },
            "ocr_min_iou": self.ocr_min_iou,
            "grounding_min_iou": self.grounding_min_iou,
            "style": self.style.name,
            "parallelism": self.parallelism,
            "infer_url": self.infer_url,
            "chat_url": self.chat_url,
        }


def crop_panel(image: Image.Image, panel: BBox, inset: int = PANEL_INSET_PX) -> tuple[bytes, tuple[int, int], ImageDims]:
    """Deterministic panel crop: rounded box, inset inward, clamped to the
    image, never collapsing below 1px.  Returns (png_bytes, origin, dims)."""
    W, H = image.size
    left = min(max(int(round(panel.x_min)) + inset, 0), W - 1)
    top = min(max(int(round(panel.y_min)) + inset, 0), H - 1)
    right = max(min(int(round(panel.x_max)) - inset, W), left + 1)
    bottom = max(min(int(round(panel.y_max)) - inset, H), top + 1)
    crop = image.crop((left, top, right, bottom))
    buf = io.BytesIO()
    crop.save(buf, format="PNG")
    return buf.getvalue(), (left, top), ImageDims(right - left, bottom - top)


def _write_if_changed(path: Path, content: str | bytes) -> None:
    data = content.encode("utf-8") if isinstance(content, str) else content
    if path.exists() and path.read_bytes() == data:
        return
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)


class PageState:
    """Raw model-output cache for one page (internal, not a contract)."""

    def __init__(self, path: Path):
        self.path = path
        self.data: dict = {}
        if path.is_file():
            self.data = json.loads(path.read_text(encoding="utf-8"))

    def get(self, key: str):
        return self.data.get(key)

    def put(self, key: str, value) -> None:
        self.data[key] = value
        _write_if_changed(self.path, json.dumps(self.data, sort_keys=True, indent=2) + "\n")


def _display_labels(graph: PageGraph, names: NameMap | None) -> dict[str, str]:
    return {
        node.id: speaker_label(label, names)
        for node, label in zip(graph.chars, graph.cluster_labels)
    }


def run_page(image_path: Path, page_dir: Path, config: PipelineConfig,
             status: PageStatus) -> None:
    """Run (or resume) the full pipeline for a single page."""
    page_dir.mkdir(parents=True, exist_ok=True)
    state = PageState(page_dir / "state.json")
    image_bytes = image_path.read_bytes()
    image = Image.open(io.BytesIO(image_bytes))
    dims = ImageDims(image.size[0], image.size[1])

    # step 1: detection and association
    if state.get("detect") is None:
        resp = mc.infer(config.infer_url,
                        mc.InferenceRequest(mc.Task.DETECT, image_bytes, dims),
                        timeout=config.timeout, attempts=config.attempts)
        state.put("detect", {"tokens": resp.tokens, "scores": mc.encode_scores(resp.scores)})
    detect = state.get("detect")
    records = parse_detection(detect["tokens"])
    counts = {k: sum(1 for r in records if r.kind is k) for k in mc.NodeKind}
    scores = mc.decode_scores(detect["scores"], counts)
    graph = build_page_graph(records, scores, dims, config.thresholds)
    status.mark("detected")

    # step 2: OCR and transcript
    if state.get("ocr") is None:
        resp = mc.infer(config.infer_url,
                        mc.InferenceRequest(mc.Task.OCR, image_bytes, dims),
                        timeout=config.timeout, attempts=config.attempts)
        state.put("ocr", {"tokens": resp.tokens})
    ocr_records = parse_ocr(state.get("ocr")["tokens"])
    reconciled = reconcile_ocr(graph.texts, ocr_records, dims, config.ocr_min_iou)
    lines = generate_transcript(graph, reconciled.texts, config.name_map)
    _write_if_changed(page_dir / "transcript.json", transcript_to_json(lines))
    status.artifacts["transcript"] = "transcript.json"
    status.mark("ocr")

    # step 3: panel captions.  A page with no detected panels degrades to a
    # single full-page region so downstream stages still produce output.
    panels: list[tuple[str, BBox]] = [(p.id, p.box) for p in graph.panels]
    if not panels:
        panels = [("page", BBox(0.0, 0.0, float(dims.width), float(dims.height)))]
    crops = [crop_panel(image, box) for _, box in panels]

    if state.get("captions") is None:
        prompt = caption_prompt()

        def fetch(crop_bytes: bytes) -> str:
            return mc.chat(config.chat_url, mc.ChatRequest(user=prompt, image=crop_bytes),
                           timeout=config.timeout, attempts=config.attempts,
                           api_key=config.chat_key).text

        with ThreadPoolExecutor(max_workers=config.parallelism) as pool:
            captions = list(pool.map(fetch, [c[0] for c in crops]))
        state.put("captions", captions)
    captions: list[str] = state.get("captions")
    captions_doc = {
        "schema_version": CAPTIONS_SCHEMA,
        "panels": [{"panel": i, "caption": c} for i, c in enumerate(captions)],
    }
    _write_if_changed(page_dir / "captions.json",
                      json.dumps(captions_doc, ensure_ascii=False, indent=2, sort_keys=True) + "\n")
    status.artifacts["captions"] = "captions.json"
    status.mark("captioned")

    # step 4: character grounding and identity linking
    if state.get("ground") is None:
        grounded_tokens = []
        for (crop_bytes, _, crop_dims), caption in zip(crops, captions):
            resp = mc.infer(config.infer_url,
                            mc.InferenceRequest(mc.Task.GROUND, crop_bytes, crop_dims, caption),
                            timeout=config.timeout, attempts=config.attempts)
            grounded_tokens.append(resp.tokens)
        state.put("ground", grounded_tokens)
    labels = _display_labels(graph, config.name_map)
    grounded_panels = []
    for i, ((panel_id, _), (crop_bytes, origin, crop_dims)) in enumerate(zip(panels, crops)):
        gc = parse_grounded_caption(state.get("ground")[i])
        chars = graph.chars_in_panel(panel_id) if panel_id != "page" else list(graph.chars)
        linked = link_grounded(gc, [c.box for c in chars], [labels[c.id] for c in chars],
                               origin, crop_dims, config.grounding_min_iou)
        phrases = []
        for seg, seg_labels in zip(gc.phrase_segments, linked):
            phrases.append({
                "phrase": seg.phrase,
                "boxes": [list(b.as_tuple()) for b in seg.boxes],
                "labels": seg_labels,
            })
        grounded_panels.append({"panel": i, "caption": gc.text, "phrases": phrases})
    grounded_doc = {"schema_version": GROUNDED_SCHEMA, "panels": grounded_panels}
    _write_if_changed(page_dir / "grounded.json",
                      json.dumps(grounded_doc, ensure_ascii=False, indent=2, sort_keys=True) + "\n")
    status.artifacts["grounded"] = "grounded.json"
    status.mark("grounded")

    # step 5: prose
    panel_records = [
        PanelRecord(panel_order=i + 1, caption=captions[i],
                    dialogues=render_panel_dialogues(lines, i if graph.panels else -1))
        for i in range(len(panels))
    ]
    prompt = prose_prompt(panel_records, config.style)
    _write_if_changed(page_dir / "prose_prompt.txt", prompt)
    status.artifacts["prose_prompt"] = "prose_prompt.txt"
    # cache keyed on the prompt: a config change (e.g. style) re-queries
    prompt_sha = hashlib.sha256(prompt.encode("utf-8")).hexdigest()
    cached = state.get("prose")
    if not (isinstance(cached, dict) and cached.get("prompt_sha") == prompt_sha):
        resp = mc.chat(config.chat_url, mc.ChatRequest(user=prompt),
                       timeout=config.timeout, attempts=config.attempts,
                       api_key=config.chat_key)
        state.put("prose", {"prompt_sha": prompt_sha, "text": resp.text})
    _write_if_changed(page_dir / "prose.txt", state.get("prose")["text"])
    status.artifacts["prose"] = "prose.txt"
    status.mark("prose")


def run_pages(pages_dir: Path, out_dir: Path, config: PipelineConfig) -> tuple[RunManifest, int]:
    """Run every page image in `pages_dir` (lexicographic order), resuming
    from an existing manifest when present.  Returns (manifest, n_failed)."""
    pages_dir = Path(pages_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = out_dir / "manifest.json"
    if manifest_path.is_file():
        manifest = RunManifest.load(manifest_path)
        manifest.config = config.snapshot()
        manifest.tool_version = TOOL_VERSION
    else:
        manifest = RunManifest(config=config.snapshot(), tool_version=TOOL_VERSION)

    image_paths = sorted(
        p for p in pages_dir.iterdir()
        if p.suffix.lower() in {".png", ".jpg", ".jpeg", ".webp"} and p.is_file()
    )
    failed = 0
    for image_path in image_paths:
        name = image_path.stem
        status = manifest.page(name)
        if status is None:
            status = PageStatus(name=name, image_ref=str(image_path))
            manifest.pages.append(status)
        status.error = None
        try:
            run_page(image_path, out_dir / "pages" / name, config, status)
        except Exception as e:  # per-page isolation: record and continue
            status.error = f"{type(e).__name__}: {e}"
            failed += 1
        manifest.save(manifest_path)
    manifest.save(manifest_path)
    return manifest, failed
