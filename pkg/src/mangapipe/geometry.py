"""Boxes, IoU, 1000-bin coordinate quantization and manga reading order.

Coordinates live in an image frame with the origin at the top-left,
x growing rightwards and y growing downwards.  Quantized boxes address a
1000x1000 bin grid laid over the image, bin 0 at the top/left edge.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import floor, isfinite

N_BINS = 1000

# Fraction of the smaller box height two boxes must share vertically to be
# considered part of the same row band when comparing reading order.
ROW_BAND_OVERLAP = 0.3


class GeometryError(ValueError):
    """Raised when a box or dimension violates its invariants."""


@dataclass(frozen=True)
class BBox:
    """Axis-aligned rectangle in pixel coordinates."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self) -> None:
        for name in ("x_min", "y_min", "x_max", "y_max"):
            v = getattr(self, name)
            if not isfinite(v):
                raise GeometryError(f"{name} is not finite: {v!r}")
            if v < 0:
                raise GeometryError(f"{name} is negative: {v!r}")
        if self.x_min > self.x_max:
            raise GeometryError(f"x_min {self.x_min} > x_max {self.x_max}")
        if self.y_min > self.y_max:
            raise GeometryError(f"y_min {self.y_min} > y_max {self.y_max}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    def translate(self, dx: float, dy: float) -> "BBox":
        return BBox(self.x_min + dx, self.y_min + dy, self.x_max + dx, self.y_max + dy)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)


@dataclass(frozen=True)
class QuantizedBox:
    """Rectangle addressed by bin indices on the 1000-bin grid."""

    bx_min: int
    by_min: int
    bx_max: int
    by_max: int

    def __post_init__(self) -> None:
        for name in ("bx_min", "by_min", "bx_max", "by_max"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool):
                raise GeometryError(f"{name} must be an int, got {v!r}")
            if not 0 <= v < N_BINS:
                raise GeometryError(f"{name} out of range [0, {N_BINS - 1}]: {v}")
        if self.bx_min > self.bx_max:
            raise GeometryError(f"bx_min {self.bx_min} > bx_max {self.bx_max}")
        if self.by_min > self.by_max:
            raise GeometryError(f"by_min {self.by_min} > by_max {self.by_max}")

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.bx_min, self.by_min, self.bx_max, self.by_max)


@dataclass(frozen=True)
class ImageDims:
    """Pixel dimensions of an image."""

    width: int
    height: int

    def __post_init__(self) -> None:
        if not (isinstance(self.width, int) and self.width >= 1):
            raise GeometryError(f"width must be a positive int, got {self.width!r}")
        if not (isinstance(self.height, int) and self.height >= 1):
            raise GeometryError(f"height must be a positive int, got {self.height!r}")


def intersection_area(a: BBox, b: BBox) -> float:
    """Overlap area of two boxes, 0.0 when they do not intersect."""
    w = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    h = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if w <= 0 or h <= 0:
        return 0.0
    return w * h


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes; 0.0 when the union has no area."""
    inter = intersection_area(a, b)
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return inter / union


def _quantize_coord(value: float, dim: int, name: str) -> int:
    if value < 0 or value > dim:
        raise GeometryError(f"{name}={value!r} lies outside [0, {dim}]")
    return min(max(floor(value / dim * N_BINS), 0), N_BINS - 1)


def quantize(box: BBox, dims: ImageDims) -> QuantizedBox:
    """Map a pixel box to bin indices: clamp(floor(c / d * 1000), 0, 999).

    The box must lie within [0, width] x [0, height]; an out-of-bounds
    coordinate raises :class:`GeometryError` naming the offender.
    """
    return QuantizedBox(
        _quantize_coord(box.x_min, dims.width, "x_min"),
        _quantize_coord(box.y_min, dims.height, "y_min"),
        _quantize_coord(box.x_max, dims.width, "x_max"),
        _quantize_coord(box.y_max, dims.height, "y_max"),
    )


def dequantize(q: QuantizedBox, dims: ImageDims) -> BBox:
    """Map bin indices back to pixels using bin centers: (k + 0.5) / 1000 * d."""
    return BBox(
        (q.bx_min + 0.5) / N_BINS * dims.width,
        (q.by_min + 0.5) / N_BINS * dims.height,
        (q.bx_max + 0.5) / N_BINS * dims.width,
        (q.by_max + 0.5) / N_BINS * dims.height,
    )


def _same_row_band(a: BBox, b: BBox) -> bool:
    overlap = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    smaller = min(a.height, b.height)
    if smaller <= 0:
        return False
    return overlap / smaller >= ROW_BAND_OVERLAP


def reading_order_less(a: BBox, b: BBox) -> bool:
    """True when `a` precedes `b` in manga reading order.

    Top to bottom across row bands, right to left within a band.  Two boxes
    share a band when their vertical overlap is at least ROW_BAND_OVERLAP of
    the smaller height.  Remaining ties break on (y_min, -x_max, x_min).
    This comparator only validates or repairs an ordering; the model's
    emission order stays authoritative.
    """
    ka = (a.y_min, -a.x_max, a.x_min)
    kb = (b.y_min, -b.x_max, b.x_min)
    if ka == kb:
        return False
    if not _same_row_band(a, b):
        if a.y_min != b.y_min:
            return a.y_min < b.y_min
    elif a.x_max != b.x_max:
        return a.x_max > b.x_max
    return ka < kb


def reading_order_sort(boxes: list[BBox]) -> list[int]:
    """Indices of `boxes` sorted into reading order (insertion sort on the
    comparator; page-scale inputs only)."""
    order: list[int] = []
    for i in range(len(boxes)):
        pos = len(order)
        for j, k in enumerate(order):
            if reading_order_less(boxes[i], boxes[k]):
                pos = j
                break
        order.insert(pos, i)
    return order
