from __future__ import annotations

import pytest

from mangapipe import fixtures
from mangapipe.page_graph import Thresholds, build_page_graph
from mangapipe.transcript import (
    NameMap,
    TranscriptLine,
    generate_transcript,
    render_panel_dialogues,
    render_transcript,
    transcript_from_json,
    transcript_to_json,
)


def fixture_graph():
    return build_page_graph(fixtures.detection_records(), fixtures.score_table(),
                            fixtures.PAGE_DIMS, Thresholds())


def fixture_texts(graph) -> dict[str, str]:
    return {node.id: fixtures.TEXT_STRINGS[i] for i, node in enumerate(graph.texts)}


class TestGenerateTranscript:
    def test_empty_when_no_texts(self):
        graph = fixture_graph()
        assert generate_transcript(graph, {}) == []

    def test_cluster_labels_without_names(self):
        graph = fixture_graph()
        lines = generate_transcript(graph, fixture_texts(graph))
        assert [l.speaker_label for l in lines] == ["C0", "C1", "C2", "C1", "C0", "UNKNOWN"]
        assert [l.text for l in lines] == fixtures.TEXT_STRINGS
        assert [l.panel_order for l in lines] == [0, 0, 1, 2, 3, 3]
        assert [l.line_order for l in lines] == list(range(6))

    def test_name_map_overrides_cluster_labels(self):
        graph = fixture_graph()
        names = NameMap({0: "Aiko", 1: "Boru"})
        lines = generate_transcript(graph, fixture_texts(graph), names)
        assert [l.speaker_label for l in lines] == [
            "Aiko", "Boru", "C2", "Boru", "Aiko", "UNKNOWN"]

    def test_empty_texts_dropped(self):
        graph = fixture_graph()
        texts = fixture_texts(graph)
        texts["text_2"] = ""
        lines = generate_transcript(graph, texts)
        assert len(lines) == 5
        assert all(l.text for l in lines)
        assert [l.line_order for l in lines] == list(range(5))

    def test_total_name_map_leaves_no_cluster_labels(self):
        graph = fixture_graph()
        names = NameMap({0: "A", 1: "B", 2: "C"})
        lines = generate_transcript(graph, fixture_texts(graph), names)
        speakers = {l.speaker_label for l in lines}
        assert not any(s.startswith("C") and s[1:].isdigit() for s in speakers)


class TestRender:
    def test_empty(self):
        assert render_transcript([]) == ""

    def test_single_line(self):
        assert render_transcript([TranscriptLine("C0", "Hi", 0, 0)]) == "C0: Hi"

    def test_golden_render(self):
        graph = fixture_graph()
        names = NameMap(fixtures.NAME_MAP)
        lines = generate_transcript(graph, fixture_texts(graph), names)
        expected = (
            "Aiko: Did you finish the job?\n"
            "Boru: Almost. One loose end.\n"
            "C2: You two are late again!\n"
            "Boru: The loose end is you.\n"
            "Aiko: Enough. We move at dawn.\n"
            "UNKNOWN: Rain hammered the tin roof."
        )
        assert render_transcript(lines) == expected

    def test_grouping_by_panel_is_stable(self):
        lines = [
            TranscriptLine("C0", "late narration", -1, 0),
            TranscriptLine("C1", "panel one first", 1, 1),
            TranscriptLine("C2", "panel zero", 0, 2),
            TranscriptLine("C1", "panel one second", 1, 3),
        ]
        assert render_transcript(lines).splitlines() == [
            "C0: late narration",
            "C2: panel zero",
            "C1: panel one first",
            "C1: panel one second",
        ]

    def test_panel_excerpt(self):
        graph = fixture_graph()
        lines = generate_transcript(graph, fixture_texts(graph))
        assert render_panel_dialogues(lines, 0) == (
            "C0: Did you finish the job?\nC1: Almost. One loose end.")
        assert render_panel_dialogues(lines, 2) == "C1: The loose end is you."
        assert render_panel_dialogues(lines, 99) == ""


class TestJsonRoundTrip:
    def test_roundtrip(self):
        graph = fixture_graph()
        lines = generate_transcript(graph, fixture_texts(graph))
        assert transcript_from_json(transcript_to_json(lines)) == lines

    def test_version_checked(self):
        with pytest.raises(ValueError, match="schema_version"):
            transcript_from_json('{"schema_version": 99, "lines": []}')


class TestNameMap:
    def test_rejects_empty_name(self):
        with pytest.raises(ValueError):
            NameMap({0: ""})

    def test_line_requires_text(self):
        with pytest.raises(ValueError):
            TranscriptLine("C0", "", 0, 0)
