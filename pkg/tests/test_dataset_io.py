from __future__ import annotations

import json

import pytest

from mangapipe import fixtures
from mangapipe.dataset_io import (
    CaptionAnnotation,
    GroundedSpan,
    PageStatus,
    RunManifest,
    SchemaError,
    caption_annotations_to_json,
    load_caption_annotations,
    load_page_annotations,
    load_verdicts,
    page_annotations_to_json,
    save_caption_annotations,
    save_page_annotations,
)
from mangapipe.geometry import QuantizedBox
from mangapipe.tokens import GroundedCaption, PhraseSegment, PlainSegment


@pytest.fixture
def pages_file(tmp_path):
    path = tmp_path / "pages.json"
    save_page_annotations([fixtures.page_annotation(), fixtures.page_annotation(False)], path)
    return path


class TestPageAnnotations:
    def test_load_two_pages(self, pages_file):
        pages = load_page_annotations(pages_file)
        assert len(pages) == 2
        assert pages[0].dims.width == 800
        assert pages[0].count(fixtures.NodeKind.CHARACTER) == 5
        assert pages[0].edge_scores is not None
        assert pages[1].edge_scores is None

    def test_edge_index_out_of_range(self, pages_file):
        doc = json.loads(pages_file.read_text())
        doc["pages"][0]["edges"]["text_char"].append([0, 99])
        pages_file.write_text(json.dumps(doc))
        with pytest.raises(SchemaError) as e:
            load_page_annotations(pages_file)
        assert "/pages/0/edges/text_char/" in str(e.value)

    def test_save_load_roundtrip_is_byte_stable(self, pages_file):
        first = pages_file.read_text(encoding="utf-8")
        again = page_annotations_to_json(load_page_annotations(pages_file))
        assert again == first

    def test_unknown_field_strict_vs_lenient(self, pages_file):
        doc = json.loads(pages_file.read_text())
        doc["pages"][0]["surprise"] = True
        pages_file.write_text(json.dumps(doc))
        with pytest.raises(SchemaError, match="unknown fields"):
            load_page_annotations(pages_file)
        warnings: list[str] = []
        pages = load_page_annotations(pages_file, strict=False, warnings=warnings)
        assert len(pages) == 2
        assert any("surprise" in w for w in warnings)

    def test_cluster_label_count_enforced(self, pages_file):
        doc = json.loads(pages_file.read_text())
        doc["pages"][0]["cluster_labels"] = [0, 1]
        pages_file.write_text(json.dumps(doc))
        with pytest.raises(SchemaError, match="cluster_labels"):
            load_page_annotations(pages_file)

    def test_texts_count_enforced(self, pages_file):
        doc = json.loads(pages_file.read_text())
        doc["pages"][0]["texts"] = ["just one"]
        pages_file.write_text(json.dumps(doc))
        with pytest.raises(SchemaError, match="texts"):
            load_page_annotations(pages_file)

    def test_bad_box_pointer(self, pages_file):
        doc = json.loads(pages_file.read_text())
        doc["pages"][0]["nodes"][2]["box"] = [5, 5, 1, 9]
        pages_file.write_text(json.dumps(doc))
        with pytest.raises(SchemaError) as e:
            load_page_annotations(pages_file)
        assert e.value.pointer == "/pages/0/nodes/2/box"

    def test_wrong_schema_version(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"schema_version": "nope", "pages": []}')
        with pytest.raises(SchemaError, match="schema_version"):
            load_page_annotations(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(SchemaError, match="cannot read"):
            load_page_annotations(tmp_path / "absent.json")

    def test_edge_score_shape_must_match_counts(self, pages_file):
        doc = json.loads(pages_file.read_text())
        doc["pages"][0]["edge_scores"]["text_char"]["shape"] = [2, 2]
        pages_file.write_text(json.dumps(doc))
        with pytest.raises(SchemaError, match="text_char"):
            load_page_annotations(pages_file)


@pytest.fixture
def captions_file(tmp_path):
    path = tmp_path / "captions.json"
    save_caption_annotations(fixtures.caption_annotations(), path)
    return path


class TestCaptionAnnotations:
    def test_zero_spans_is_valid(self, tmp_path):
        path = tmp_path / "c.json"
        save_caption_annotations(
            [CaptionAnnotation("p.png", "No characters here.", ())], path)
        loaded = load_caption_annotations(path)
        assert loaded[0].spans == ()

    def test_overlapping_spans_rejected(self, captions_file):
        doc = json.loads(captions_file.read_text())
        spans = doc["panels"][0]["grounded_spans"]
        spans.append({"start": spans[0]["start"], "end": spans[0]["end"] + 1,
                      "boxes": [[0, 0, 1, 1]]})
        captions_file.write_text(json.dumps(doc))
        with pytest.raises(SchemaError, match="overlaps"):
            load_caption_annotations(captions_file)

    def test_span_needs_boxes(self, captions_file):
        doc = json.loads(captions_file.read_text())
        doc["panels"][0]["grounded_spans"][0]["boxes"] = []
        captions_file.write_text(json.dumps(doc))
        with pytest.raises(SchemaError, match="at least one box"):
            load_caption_annotations(captions_file)

    def test_offsets_within_caption(self, captions_file):
        doc = json.loads(captions_file.read_text())
        doc["panels"][0]["grounded_spans"][0]["end"] = 10_000
        captions_file.write_text(json.dumps(doc))
        with pytest.raises(SchemaError, match="outside caption"):
            load_caption_annotations(captions_file)

    def test_grounded_caption_conversion_losless(self, captions_file):
        for ca in load_caption_annotations(captions_file):
            gc = ca.to_grounded_caption()
            assert gc.text == ca.caption
            back = CaptionAnnotation.from_grounded_caption(gc, ca.panel_image_ref)
            assert back == ca

    def test_conversion_roundtrip_from_grounded(self):
        gc = GroundedCaption((
            PhraseSegment("a boy", (QuantizedBox(1, 2, 3, 4),)),
            PlainSegment(" waves at "),
            PhraseSegment("a girl", (QuantizedBox(5, 6, 7, 8), QuantizedBox(9, 9, 10, 10))),
            PlainSegment("."),
        ))
        ca = CaptionAnnotation.from_grounded_caption(gc, "x.png")
        assert ca.caption == "a boy waves at a girl."
        assert ca.spans[0] == GroundedSpan(0, 5, (QuantizedBox(1, 2, 3, 4),))
        assert ca.to_grounded_caption() == gc

    def test_roundtrip_byte_stable(self, captions_file):
        first = captions_file.read_text(encoding="utf-8")
        assert caption_annotations_to_json(load_caption_annotations(captions_file)) == first


class TestRunManifest:
    def test_stage_monotonicity_enforced(self):
        status = PageStatus(name="p", image_ref="p.png")
        status.mark("detected")
        status.mark("ocr")
        assert status.done("ocr")
        bad = PageStatus(name="q", image_ref="q.png")
        bad.stages["prose"] = True
        with pytest.raises(ValueError, match="earlier stage"):
            bad.mark("prose")

    def test_json_roundtrip(self):
        m = RunManifest(config={"style": "PROSE"}, tool_version="0.1.0")
        s = PageStatus(name="p1", image_ref="pages/p1.png")
        s.mark("detected")
        s.artifacts["transcript"] = "pages/p1/transcript.json"
        m.pages.append(s)
        again = RunManifest.from_json(m.to_json())
        assert again.to_json() == m.to_json()
        assert again.page("p1").done("detected")

    def test_load_rejects_non_monotone(self):
        doc = {
            "schema_version": "mangapipe/manifest-v1",
            "tool_version": "0.1.0",
            "config": {},
            "pages": [{"name": "p", "image_ref": "p.png",
                       "stages": {"detected": False, "ocr": True, "captioned": False,
                                  "grounded": False, "prose": False},
                       "artifacts": {}, "error": None}],
        }
        with pytest.raises(SchemaError, match="stages"):
            RunManifest.from_json(json.dumps(doc))


class TestVerdicts:
    def test_load_fixture(self, fixtures_dir):
        verdicts = load_verdicts(fixtures_dir / "annotations" / "verdicts.json")
        assert set(verdicts) == {"gpt-4", "gemini-1.5", "llama3", "gemma2"}
        assert verdicts["gpt-4"] == [3.63]

    def test_out_of_range_rejected(self, tmp_path):
        path = tmp_path / "v.json"
        path.write_text(json.dumps({
            "schema_version": "mangapipe/verdicts-v1",
            "verdicts": [{"judge": "a", "score": 9}],
        }))
        with pytest.raises(SchemaError, match="outside"):
            load_verdicts(path)
