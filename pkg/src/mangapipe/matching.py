"""IoU-based Hungarian bipartite matching.

Used in two places along the pipeline: transferring OCR text onto detected
text boxes, and linking grounded caption phrases to detected characters.
The assignment solver works on rectangular cost matrices directly, no
padding, and is O(n^3) which is plenty at page scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .geometry import BBox, ImageDims, dequantize, iou
from .tokens import GroundedCaption, PhraseSegment

UNLINKED = "UNLINKED"

# IoU floor for OCR<->detection reconciliation: both box sets come from the
# same model decoding the same page, so they nearly coincide.
OCR_RECONCILE_MIN_IOU = 0.1
# IoU floor for grounded-phrase <-> character linking: boxes cross model
# outputs, so be stricter.
GROUNDING_LINK_MIN_IOU = 0.5


def hungarian(cost: list[list[float]]) -> tuple[list[tuple[int, int]], float]:
    """Minimum-cost one-to-one assignment on a rectangular cost matrix.

    Returns (pairs, total_cost) where pairs holds min(rows, cols)
    (row, col) tuples sorted by row, and total_cost is the optimal sum.
    An empty matrix yields an empty assignment.
    """
    n = len(cost)
    m = len(cost[0]) if n else 0
    if n == 0 or m == 0:
        return [], 0.0
    for i, row in enumerate(cost):
        if len(row) != m:
            raise ValueError(f"ragged cost matrix: row {i} has {len(row)} entries, expected {m}")
        for j, v in enumerate(row):
            if v != v or v in (float("inf"), float("-inf")):
                raise ValueError(f"non-finite cost at ({i}, {j}): {v!r}")

    transposed = n > m
    if transposed:
        cost = [[cost[i][j] for i in range(n)] for j in range(m)]
        n, m = m, n

    # Potentials method over rows 1..n and columns 1..m; p[j] is the row
    # matched to column j, column 0 is the virtual root.
    INF = float("inf")
    u = [0.0] * (n + 1)
    v = [0.0] * (m + 1)
    p = [0] * (m + 1)
    way = [0] * (m + 1)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [INF] * (m + 1)
        used = [False] * (m + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = INF
            j1 = 0
            row = cost[i0 - 1]
            for j in range(1, m + 1):
                if used[j]:
                    continue
                cur = row[j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(m + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1

    pairs = []
    for j in range(1, m + 1):
        if p[j]:
            pairs.append((j - 1, p[j] - 1) if transposed else (p[j] - 1, j - 1))
    pairs.sort()
    total = sum(cost[c][r] if transposed else cost[r][c] for r, c in pairs)
    return pairs, total


@dataclass(frozen=True)
class Matching:
    """Result of an IoU bipartite match between two box lists."""

    pairs: list[tuple[int, int, float]]  # (left_index, right_index, iou)
    unmatched_left: list[int]
    unmatched_right: list[int]


def match_by_iou(left: list[BBox], right: list[BBox], min_iou: float) -> Matching:
    """Hungarian assignment on cost 1 - IoU, dropping pairs below `min_iou`.

    Output is canonical: pairs sorted by left index, unmatched lists sorted.
    """
    if not 0 <= min_iou <= 1:
        raise ValueError(f"min_iou must be in [0, 1], got {min_iou}")
    overlap = [[iou(a, b) for b in right] for a in left]
    assignment, _ = hungarian([[1.0 - o for o in row] for row in overlap])
    pairs = []
    used_l: set[int] = set()
    used_r: set[int] = set()
    for li, ri in assignment:
        score = overlap[li][ri]
        if score >= min_iou:
            pairs.append((li, ri, score))
            used_l.add(li)
            used_r.add(ri)
    return Matching(
        pairs=sorted(pairs),
        unmatched_left=sorted(set(range(len(left))) - used_l),
        unmatched_right=sorted(set(range(len(right))) - used_r),
    )


@dataclass(frozen=True)
class OcrReconciliation:
    """OCR text transferred onto detected text nodes.

    `texts` maps node id -> string for every detected text node; nodes with
    no matching OCR record get "".  Unmatched indices on either side are
    reported, not treated as failures.
    """

    texts: dict[str, str]
    unmatched_nodes: list[str] = field(default_factory=list)
    unmatched_ocr: list[int] = field(default_factory=list)


def reconcile_ocr(text_nodes, ocr_records, dims: ImageDims,
                  min_iou: float = OCR_RECONCILE_MIN_IOU) -> OcrReconciliation:
    """Match detected text boxes against OCR record boxes and carry the text over.

    `text_nodes` are page-graph nodes of kind TEXT (page-frame boxes);
    `ocr_records` carry quantized boxes which are dequantized with `dims`.
    """
    left = [n.box for n in text_nodes]
    right = [dequantize(r.box, dims) for r in ocr_records]
    m = match_by_iou(left, right, min_iou)
    texts = {n.id: "" for n in text_nodes}
    for li, ri, _ in m.pairs:
        texts[text_nodes[li].id] = ocr_records[ri].text
    return OcrReconciliation(
        texts=texts,
        unmatched_nodes=[text_nodes[i].id for i in m.unmatched_left],
        unmatched_ocr=list(m.unmatched_right),
    )


def link_grounded(caption: GroundedCaption, char_boxes: list[BBox], char_labels: list[str],
                  panel_origin: tuple[float, float], panel_dims: ImageDims,
                  min_iou: float = GROUNDING_LINK_MIN_IOU) -> list[list[str]]:
    """Resolve each grounded phrase box to a character label.

    Grounded boxes are panel-local bins: they are dequantized with the panel
    crop dims, translated by `panel_origin` into the page frame, then matched
    one-to-one (per phrase) against `char_boxes`.  Each matched box yields the
    corresponding entry of `char_labels`; unmatched boxes yield UNLINKED.

    Returns one label list per phrase segment, aligned with its boxes.
    """
    if len(char_boxes) != len(char_labels):
        raise ValueError(f"{len(char_boxes)} char boxes but {len(char_labels)} labels")
    ox, oy = panel_origin
    out: list[list[str]] = []
    for seg in caption.segments:
        if not isinstance(seg, PhraseSegment):
            continue
        page_boxes = [dequantize(q, panel_dims).translate(ox, oy) for q in seg.boxes]
        m = match_by_iou(page_boxes, char_boxes, min_iou)
        labels = [UNLINKED] * len(page_boxes)
        for li, ri, _ in m.pairs:
            labels[li] = char_labels[ri]
        out.append(labels)
    return out
