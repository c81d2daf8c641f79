"""Evaluation metrics: detection P/R/F1, clustering AMI, association AP,
character-grounding P/R/F1 and judge-score aggregation.

All metrics are deterministic under input permutation; box matching is done
with the Hungarian solver rather than greedily so results never depend on
iteration order.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from math import exp, lgamma, log

from .geometry import BBox, iou
from .matching import hungarian
from .prompts import JudgeVerdict
from .tokens import GroundedCaption, NodeKind, QuantizedBox


@dataclass(frozen=True)
class PrfCounts:
    """Precision/recall/F1 with the backing instance counts.

    With nothing to match on either side (tp = fp = fn = 0) the comparison
    is vacuously perfect and all three scores are 1.0.
    """

    tp: int
    fp: int
    fn: int

    @property
    def precision(self) -> float:
        if self.tp + self.fp + self.fn == 0:
            return 1.0
        if self.tp + self.fp == 0:
            return 0.0
        return self.tp / (self.tp + self.fp)

    @property
    def recall(self) -> float:
        if self.tp + self.fp + self.fn == 0:
            return 1.0
        if self.tp + self.fn == 0:
            return 0.0
        return self.tp / (self.tp + self.fn)

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        if p + r == 0:
            return 0.0
        return 2 * p * r / (p + r)


@dataclass(frozen=True)
class DetectionEvalResult:
    per_kind: dict[NodeKind, PrfCounts]

    @property
    def overall(self) -> PrfCounts:
        return PrfCounts(
            tp=sum(c.tp for c in self.per_kind.values()),
            fp=sum(c.fp for c in self.per_kind.values()),
            fn=sum(c.fn for c in self.per_kind.values()),
        )


def _match_boxes(pred: list[BBox], gt: list[BBox], iou_thresh: float) -> int:
    """Number of pred/gt pairs matched one-to-one at IoU >= iou_thresh."""
    if not pred or not gt:
        return 0
    overlap = [[iou(p, g) for g in gt] for p in pred]
    pairs, _ = hungarian([[1.0 - o for o in row] for row in overlap])
    return sum(1 for pi, gi in pairs if overlap[pi][gi] >= iou_thresh)


def detection_eval(pred, gt, iou_thresh: float = 0.5) -> DetectionEvalResult:
    """Per-kind detection scores via optimal IoU matching.

    `pred` and `gt` are sequences of objects with `.kind` and `.box`.
    Matched pairs at IoU >= iou_thresh count as true positives; leftover
    predictions are false positives, leftover ground truth false negatives.
    """
    per_kind = {}
    for kind in NodeKind:
        p_boxes = [n.box for n in pred if n.kind is kind]
        g_boxes = [n.box for n in gt if n.kind is kind]
        tp = _match_boxes(p_boxes, g_boxes, iou_thresh)
        per_kind[kind] = PrfCounts(tp=tp, fp=len(p_boxes) - tp, fn=len(g_boxes) - tp)
    return DetectionEvalResult(per_kind=per_kind)


def _canonical(labels) -> tuple[int, ...]:
    seen: dict = {}
    out = []
    for l in labels:
        if l not in seen:
            seen[l] = len(seen)
        out.append(seen[l])
    return tuple(out)


def _entropy(sizes: list[int], n: int) -> float:
    return -sum(s / n * log(s / n) for s in sizes if s)


def _mutual_information(contingency: dict[tuple[int, int], int],
                        a_sizes: list[int], b_sizes: list[int], n: int) -> float:
    mi = 0.0
    for (i, j), nij in contingency.items():
        if nij:
            mi += nij / n * log(n * nij / (a_sizes[i] * b_sizes[j]))
    return mi


def _expected_mi(a_sizes: list[int], b_sizes: list[int], n: int) -> float:
    """Expected mutual information under the permutation (hypergeometric) model."""
    lg = lgamma
    emi = 0.0
    for ai in a_sizes:
        for bj in b_sizes:
            lo = max(1, ai + bj - n)
            hi = min(ai, bj)
            for nij in range(lo, hi + 1):
                log_p = (
                    lg(ai + 1) + lg(bj + 1) + lg(n - ai + 1) + lg(n - bj + 1)
                    - lg(n + 1) - lg(nij + 1) - lg(ai - nij + 1) - lg(bj - nij + 1)
                    - lg(n - ai - bj + nij + 1)
                )
                emi += nij / n * log(n * nij / (ai * bj)) * exp(log_p)
    return emi


def ami(labels_a, labels_b) -> float:
    """Adjusted mutual information between two partitions of the same set.

    Chance-corrected with the permutation-model expected MI and normalized
    by the arithmetic mean of the two entropies:

        AMI = (MI - E[MI]) / (mean(H_a, H_b) - E[MI])

    Identical partitions (up to relabelling) score exactly 1.0; with n = 1,
    or when both partitions are single-cluster, the value is 1.0 when they
    are equal and 0.0 otherwise (with n = 1 they are always equal).
    """
    a = _canonical(labels_a)
    b = _canonical(labels_b)
    if len(a) != len(b):
        raise ValueError(f"partition lengths differ: {len(a)} vs {len(b)}")
    n = len(a)
    if n == 0:
        raise ValueError("partitions must cover at least one element")
    if a == b:
        return 1.0

    ka = max(a) + 1
    kb = max(b) + 1
    a_sizes = [0] * ka
    b_sizes = [0] * kb
    contingency: dict[tuple[int, int], int] = {}
    for i, j in zip(a, b):
        a_sizes[i] += 1
        b_sizes[j] += 1
        contingency[(i, j)] = contingency.get((i, j), 0) + 1

    mean_h = 0.5 * (_entropy(a_sizes, n) + _entropy(b_sizes, n))
    mi = _mutual_information(contingency, a_sizes, b_sizes, n)
    emi = _expected_mi(a_sizes, b_sizes, n)
    denom = mean_h - emi
    if abs(denom) < 1e-15:
        return 0.0
    return (mi - emi) / denom


def association_ap(candidates: list[tuple[tuple[int, int], float]],
                   gt_edges: set[tuple[int, int]]) -> float:
    """Average precision of scored candidate edges against a ground-truth set.

    Candidates are ranked by descending score, ties broken by pair index.
    AP averages precision-at-rank over the ground-truth edges that appear;
    ground-truth edges never proposed contribute zero.  An empty ground
    truth is vacuously perfect (1.0).
    """
    if not gt_edges:
        return 1.0
    ranked = sorted(candidates, key=lambda c: (-c[1], c[0]))
    hits = 0
    total = 0.0
    for rank, (pair, _) in enumerate(ranked, start=1):
        if pair in gt_edges:
            hits += 1
            total += hits / rank
    return total / len(gt_edges)


_PUNCT_RE = re.compile(r"[^\w\s]", re.UNICODE)


def normalize_phrase(phrase: str) -> str:
    """Lowercase, strip punctuation, collapse whitespace."""
    return " ".join(_PUNCT_RE.sub(" ", phrase.lower()).split())


def _lcs_align(a: list[str], b: list[str]) -> list[tuple[int, int]]:
    """Order-preserving alignment of equal strings (longest common subsequence).

    Duplicates map positionally.  Backtrace prefers advancing `a` on ties,
    so the alignment is deterministic.
    """
    la, lb = len(a), len(b)
    dp = [[0] * (lb + 1) for _ in range(la + 1)]
    for i in range(la - 1, -1, -1):
        for j in range(lb - 1, -1, -1):
            if a[i] == b[j]:
                dp[i][j] = dp[i + 1][j + 1] + 1
            else:
                dp[i][j] = max(dp[i + 1][j], dp[i][j + 1])
    pairs = []
    i = j = 0
    while i < la and j < lb:
        if a[i] == b[j] and dp[i][j] == dp[i + 1][j + 1] + 1:
            pairs.append((i, j))
            i += 1
            j += 1
        elif dp[i + 1][j] >= dp[i][j + 1]:
            i += 1
        else:
            j += 1
    return pairs


def _bin_cell_box(q: QuantizedBox) -> BBox:
    # a quantized box covers bin cells [bx_min, bx_max] inclusive
    return BBox(float(q.bx_min), float(q.by_min), float(q.bx_max + 1), float(q.by_max + 1))


@dataclass(frozen=True)
class GroundingEvalResult:
    counts: PrfCounts
    aligned: list[tuple[int, int]]      # (gt phrase index, pred phrase index)
    unmatched_gt: list[int]
    unmatched_pred: list[int]

    @property
    def precision(self) -> float:
        return self.counts.precision

    @property
    def recall(self) -> float:
        return self.counts.recall

    @property
    def f1(self) -> float:
        return self.counts.f1


def grounding_eval(pred: GroundedCaption, gt: GroundedCaption,
                   iou_thresh: float = 0.5) -> GroundingEvalResult:
    """Score predicted grounding against reference grounding, box instances
    as the unit.

    Character-referring phrases are aligned order-preservingly on their
    normalized text (longest common subsequence), which maps duplicate
    phrases positionally instead of ambiguously.  Within each aligned phrase
    pair, boxes match one-to-one at IoU >= iou_thresh; boxes of unaligned
    phrases count wholly as misses (ground truth) or false alarms
    (prediction).
    """
    gt_ph = gt.phrase_segments
    pred_ph = pred.phrase_segments
    aligned = _lcs_align(
        [normalize_phrase(p.phrase) for p in gt_ph],
        [normalize_phrase(p.phrase) for p in pred_ph],
    )
    tp = fp = fn = 0
    for gi, pi in aligned:
        g_boxes = [_bin_cell_box(q) for q in gt_ph[gi].boxes]
        p_boxes = [_bin_cell_box(q) for q in pred_ph[pi].boxes]
        matched = _match_boxes(p_boxes, g_boxes, iou_thresh)
        tp += matched
        fp += len(p_boxes) - matched
        fn += len(g_boxes) - matched
    aligned_gt = {gi for gi, _ in aligned}
    aligned_pred = {pi for _, pi in aligned}
    unmatched_gt = [i for i in range(len(gt_ph)) if i not in aligned_gt]
    unmatched_pred = [i for i in range(len(pred_ph)) if i not in aligned_pred]
    fn += sum(len(gt_ph[i].boxes) for i in unmatched_gt)
    fp += sum(len(pred_ph[i].boxes) for i in unmatched_pred)
    return GroundingEvalResult(
        counts=PrfCounts(tp=tp, fp=fp, fn=fn),
        aligned=aligned,
        unmatched_gt=unmatched_gt,
        unmatched_pred=unmatched_pred,
    )


@dataclass(frozen=True)
class JudgeSummary:
    per_judge: dict[str, float]        # judge name -> mean score
    per_judge_n: dict[str, int]
    overall: float                     # mean of the per-judge means
    n: int

    def as_row(self) -> dict[str, float]:
        row = dict(self.per_judge)
        row["Avg"] = self.overall
        return row


def judge_summarize(verdicts: dict[str, list[JudgeVerdict | float]]) -> JudgeSummary:
    """Aggregate per-judge verdicts: per-judge mean, then the overall mean of
    those means (so every judge weighs equally regardless of sample count)."""
    if not verdicts or all(not v for v in verdicts.values()):
        raise ValueError("no verdicts to summarize")
    per_judge: dict[str, float] = {}
    per_n: dict[str, int] = {}
    for judge, items in verdicts.items():
        if not items:
            raise ValueError(f"judge {judge!r} has no verdicts")
        scores = [v.score if isinstance(v, JudgeVerdict) else float(v) for v in items]
        for s in scores:
            if not 1.0 <= s <= 5.0:
                raise ValueError(f"judge {judge!r} score outside [1, 5]: {s}")
        per_judge[judge] = sum(scores) / len(scores)
        per_n[judge] = len(scores)
    overall = sum(per_judge.values()) / len(per_judge)
    return JudgeSummary(per_judge=per_judge, per_judge_n=per_n, overall=overall,
                        n=sum(per_n.values()))
