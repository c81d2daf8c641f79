"""Reading-order, speaker-labelled dialogue transcript for one page.

Speakers are labelled `C<k>` by character cluster, or by display name when
a name map covers the cluster.  Texts whose speaker is unknown are kept and
labelled UNKNOWN rather than dropped: the accessibility goal favours
completeness over tidiness.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .page_graph import PageGraph

UNKNOWN_SPEAKER = "UNKNOWN"

TRANSCRIPT_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class TranscriptLine:
    speaker_label: str
    text: str
    panel_order: int  # position of the panel in emission order, -1 if unassigned
    line_order: int

    def __post_init__(self) -> None:
        if not self.text:
            raise ValueError("transcript line with empty text")


class NameMap:
    """cluster label -> display name; names nonempty, labels distinct."""

    def __init__(self, names: dict[int, str]):
        cleaned: dict[int, str] = {}
        for label, name in names.items():
            label = int(label)
            if not name:
                raise ValueError(f"empty name for cluster {label}")
            if label in cleaned:
                raise ValueError(f"duplicate cluster label {label}")
            cleaned[label] = name
        self._names = cleaned

    def get(self, label: int) -> str | None:
        return self._names.get(label)

    @classmethod
    def from_json_file(cls, path) -> "NameMap":
        with open(path, encoding="utf-8") as f:
            raw = json.load(f)
        return cls({int(k): str(v) for k, v in raw.items()})


def speaker_label(cluster: int | None, names: NameMap | None) -> str:
    if cluster is None:
        return UNKNOWN_SPEAKER
    if names is not None:
        name = names.get(cluster)
        if name is not None:
            return name
    return f"C{cluster}"


def generate_transcript(graph: PageGraph, texts: dict[str, str],
                        names: NameMap | None = None) -> list[TranscriptLine]:
    """One line per nonempty reconciled text, in text-node emission order."""
    lines: list[TranscriptLine] = []
    for node in sorted(graph.texts, key=lambda n: n.order_index):
        text = texts.get(node.id, "")
        if not text:
            continue
        lines.append(TranscriptLine(
            speaker_label=speaker_label(graph.speaker_cluster_of(node.id), names),
            text=text,
            panel_order=graph.panel_index_of(node.id),
            line_order=len(lines),
        ))
    return lines


def render_transcript(lines: list[TranscriptLine]) -> str:
    """`SPEAKER: text` lines, grouped by panel in panel order, newline-joined.

    Unassigned lines (panel_order -1) sort before the first panel.  The
    grouping sort is stable, so within a panel the emission order holds.
    """
    ordered = sorted(lines, key=lambda l: l.panel_order)
    return "\n".join(f"{l.speaker_label}: {l.text}" for l in ordered)


def render_panel_dialogues(lines: list[TranscriptLine], panel_order: int) -> str:
    """Dialogue excerpt for one panel, or "" when the panel is silent."""
    return "\n".join(
        f"{l.speaker_label}: {l.text}" for l in lines if l.panel_order == panel_order
    )


def transcript_to_json(lines: list[TranscriptLine]) -> str:
    """Versioned wire format: array of {speaker, text, panel, order}."""
    doc = {
        "schema_version": TRANSCRIPT_SCHEMA_VERSION,
        "lines": [
            {"speaker": l.speaker_label, "text": l.text, "panel": l.panel_order, "order": l.line_order}
            for l in lines
        ],
    }
    return json.dumps(doc, ensure_ascii=False, indent=2, sort_keys=True) + "\n"


def transcript_from_json(raw: str) -> list[TranscriptLine]:
    doc = json.loads(raw)
    if doc.get("schema_version") != TRANSCRIPT_SCHEMA_VERSION:
        raise ValueError(f"unsupported transcript schema_version: {doc.get('schema_version')!r}")
    return [
        TranscriptLine(d["speaker"], d["text"], d["panel"], d["order"])
        for d in doc["lines"]
    ]
