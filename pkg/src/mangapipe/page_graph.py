"""Typed page graph: detection nodes plus association-score edges.

Nodes come from the detection pass in manga reading order; the pairwise
scores come from the model's association heads and are consumed here as
data.  Thresholding the scores yields character clusters (char-char),
speaker assignments (text-char) and tail links (text-tail); panel
membership is geometric.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import BBox, ImageDims, dequantize, intersection_area
from .matching import hungarian
from .tokens import DetectionRecord, NodeKind

DEFAULT_THRESHOLD = 0.5


@dataclass(frozen=True)
class Node:
    id: str
    kind: NodeKind
    box: BBox
    order_index: int


@dataclass(frozen=True)
class Thresholds:
    """Binary-score cutoffs for the three association kinds."""

    char_char: float = DEFAULT_THRESHOLD
    text_char: float = DEFAULT_THRESHOLD
    text_tail: float = DEFAULT_THRESHOLD

    def __post_init__(self) -> None:
        for name in ("char_char", "text_char", "text_tail"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"threshold {name} must be in [0, 1], got {v}")


def _as_score_matrix(values, shape: tuple[int, int], name: str) -> np.ndarray:
    m = np.asarray(values, dtype=float)
    if m.size == 0:
        m = m.reshape(shape) if m.size == np.prod(shape) else m
    if m.shape != shape:
        raise ValueError(f"score matrix {name} has shape {m.shape}, expected {shape}")
    if m.size and (np.min(m) < 0.0 or np.max(m) > 1.0):
        raise ValueError(f"score matrix {name} has entries outside [0, 1]")
    return m


class ScoreTable:
    """Pairwise association scores, one matrix per edge kind.

    text_char: [n_text x n_char], char_char: [n_char x n_char] (symmetric),
    text_tail: [n_text x n_tail].  All entries in [0, 1].
    """

    def __init__(self, text_char, char_char, text_tail,
                 n_text: int, n_char: int, n_tail: int):
        self.text_char = _as_score_matrix(text_char, (n_text, n_char), "text_char")
        self.char_char = _as_score_matrix(char_char, (n_char, n_char), "char_char")
        self.text_tail = _as_score_matrix(text_tail, (n_text, n_tail), "text_tail")
        if self.char_char.size and not np.allclose(self.char_char, self.char_char.T, atol=1e-6):
            raise ValueError("score matrix char_char is not symmetric")

    @classmethod
    def empty(cls, n_text: int = 0, n_char: int = 0, n_tail: int = 0) -> "ScoreTable":
        return cls(
            np.zeros((n_text, n_char)), np.zeros((n_char, n_char)), np.zeros((n_text, n_tail)),
            n_text, n_char, n_tail,
        )


@dataclass(frozen=True)
class PageGraph:
    """Immutable page structure derived from one detection pass."""

    panels: list[Node]
    chars: list[Node]
    texts: list[Node]
    tails: list[Node]
    cluster_labels: list[int]          # per char, aligned with `chars`
    speaker_of: dict[str, str]         # text id -> char id
    tail_of: dict[str, str]            # text id -> tail id (injective)
    panel_of: dict[str, str]           # non-panel node id -> panel id
    scores: ScoreTable | None = field(repr=False, compare=False, default=None)

    def cluster_of(self, char_id: str) -> int:
        for node, label in zip(self.chars, self.cluster_labels):
            if node.id == char_id:
                return label
        raise KeyError(char_id)

    def speaker_cluster_of(self, text_id: str) -> int | None:
        char_id = self.speaker_of.get(text_id)
        return None if char_id is None else self.cluster_of(char_id)

    def panel_index_of(self, node_id: str) -> int:
        """Position of the node's panel among panels in emission order, -1 if unassigned."""
        panel_id = self.panel_of.get(node_id)
        if panel_id is None:
            return -1
        return next(i for i, p in enumerate(self.panels) if p.id == panel_id)

    def chars_in_panel(self, panel_id: str) -> list[Node]:
        return [c for c in self.chars if self.panel_of.get(c.id) == panel_id]


def cluster_characters(scores, threshold: float) -> list[int]:
    """Connected components of the char-char graph thresholded at `threshold`.

    Edges exist where score >= threshold.  Component labels are assigned in
    reading order of each component's earliest member, so label 0 is the
    cluster containing the first-emitted character.
    """
    m = np.asarray(scores, dtype=float)
    n = m.shape[0] if m.ndim == 2 else 0
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"char_char matrix must be square, got shape {m.shape}")
    if n and not np.allclose(m, m.T, atol=1e-6):
        raise ValueError("char_char matrix is asymmetric beyond 1e-6")
    parent = list(range(n))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for i in range(n):
        for j in range(i + 1, n):
            if m[i, j] >= threshold:
                parent[find(i)] = find(j)
    labels_by_root: dict[int, int] = {}
    labels = []
    for i in range(n):
        root = find(i)
        if root not in labels_by_root:
            labels_by_root[root] = len(labels_by_root)
        labels.append(labels_by_root[root])
    return labels


def assign_speakers(scores, threshold: float) -> dict[int, int]:
    """Per-text argmax speaker, kept only when the best score clears `threshold`.

    Ties break toward the character with the smaller emission index.
    Returns text index -> char index.
    """
    m = np.asarray(scores, dtype=float)
    out: dict[int, int] = {}
    if m.size == 0:
        return out
    for t in range(m.shape[0]):
        c = int(np.argmax(m[t]))  # argmax takes the first maximum: earliest emission wins ties
        if m[t, c] >= threshold:
            out[t] = c
    return out


def link_tails(scores, threshold: float) -> dict[int, int]:
    """Maximum-weight one-to-one text-tail assignment, restricted to pairs
    scoring at least `threshold`.  Returns text index -> tail index.

    The assignment is computed on the full score matrix (Hungarian on
    -score) and then filtered, so raising the threshold can only remove
    links, never rearrange them.
    """
    m = np.asarray(scores, dtype=float)
    if m.size == 0:
        return {}
    pairs, _ = hungarian((-m).tolist())
    return {t: u for t, u in pairs if m[t, u] >= threshold}


def assign_panels(panels: list[Node], others: list[Node]) -> dict[str, str]:
    """Map each non-panel node to the panel with maximal box intersection.

    Nodes intersecting no panel stay unmapped; ties go to the panel with the
    smaller emission index.
    """
    out: dict[str, str] = {}
    for node in others:
        best_area = 0.0
        best: Node | None = None
        for panel in panels:
            a = intersection_area(node.box, panel.box)
            if a > best_area:
                best_area = a
                best = panel
        if best is not None:
            out[node.id] = best.id
    return out


def nodes_from_records(records: list[DetectionRecord], dims: ImageDims) -> list[Node]:
    """Dequantize detection records into page-frame nodes, ids `<kind>_<k>`
    with k counting within each kind in emission order."""
    counters = {kind: 0 for kind in NodeKind}
    nodes = []
    for r in records:
        k = counters[r.kind]
        counters[r.kind] += 1
        nodes.append(Node(f"{r.kind.value}_{k}", r.kind, dequantize(r.box, dims), r.order_index))
    return nodes


def build_page_graph(records: list[DetectionRecord], scores: ScoreTable,
                     dims: ImageDims, thresholds: Thresholds | None = None) -> PageGraph:
    """Compose clustering, speaker assignment, tail linking and panel scoping.

    Deterministic for fixed inputs.  Score matrix shapes must agree with the
    per-kind node counts.
    """
    thresholds = thresholds or Thresholds()
    nodes = nodes_from_records(records, dims)
    panels = [n for n in nodes if n.kind is NodeKind.PANEL]
    chars = [n for n in nodes if n.kind is NodeKind.CHARACTER]
    texts = [n for n in nodes if n.kind is NodeKind.TEXT]
    tails = [n for n in nodes if n.kind is NodeKind.TAIL]
    expected = {
        "text_char": (len(texts), len(chars)),
        "char_char": (len(chars), len(chars)),
        "text_tail": (len(texts), len(tails)),
    }
    for name, shape in expected.items():
        got = getattr(scores, name).shape
        if got != shape:
            raise ValueError(f"score matrix {name} has shape {got}, expected {shape}")

    labels = cluster_characters(scores.char_char, thresholds.char_char)
    speakers = assign_speakers(scores.text_char, thresholds.text_char)
    tail_links = link_tails(scores.text_tail, thresholds.text_tail)
    return PageGraph(
        panels=panels,
        chars=chars,
        texts=texts,
        tails=tails,
        cluster_labels=labels,
        speaker_of={texts[t].id: chars[c].id for t, c in sorted(speakers.items())},
        tail_of={texts[t].id: tails[u].id for t, u in sorted(tail_links.items())},
        panel_of=assign_panels(panels, chars + texts + tails),
        scores=scores,
    )
