"""Manga page-to-prose pipeline engine and evaluation harness."""

from .geometry import BBox, ImageDims, QuantizedBox, dequantize, iou, quantize
from .page_graph import PageGraph, ScoreTable, Thresholds, build_page_graph
from .tokens import (
    DetectionRecord,
    GroundedCaption,
    NodeKind,
    OcrRecord,
    ParseError,
    parse_detection,
    parse_grounded_caption,
    parse_ocr,
    parse_pregrounded,
    serialize_detection,
    serialize_grounded_caption,
    serialize_ocr,
)

__version__ = "0.1.0"

__all__ = [
    "BBox",
    "DetectionRecord",
    "GroundedCaption",
    "ImageDims",
    "NodeKind",
    "OcrRecord",
    "PageGraph",
    "ParseError",
    "QuantizedBox",
    "ScoreTable",
    "Thresholds",
    "build_page_graph",
    "dequantize",
    "iou",
    "parse_detection",
    "parse_grounded_caption",
    "parse_ocr",
    "parse_pregrounded",
    "quantize",
    "serialize_detection",
    "serialize_grounded_caption",
    "serialize_ocr",
    "__version__",
]
