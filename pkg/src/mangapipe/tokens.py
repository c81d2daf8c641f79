"""Codec for the model's three token-sequence output formats.

Canonical textual notation, used verbatim in fixture files and over the
wire:

    <loc_k>     location token, one of 1000 bins (k in [0, 999])
    <panel> <char> <text> <tail>    class tokens
    <grnd> ... </grnd>              grounded-phrase span markers
    </s>        end of sequence

A detection stream is (loc x4, class)* </s>.  An OCR stream is
(word+, loc x4)* </s>.  A grounded-caption stream is caption words with
spans marked inline, each closed span followed by one location quad per
referenced character instance.

The codec works on already-segmented symbolic tokens; subword tokenization
of natural language happens inside the model, not here.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum

from .geometry import GeometryError, QuantizedBox

EOS = "</s>"
GRND_OPEN = "<grnd>"
GRND_CLOSE = "</grnd>"

_LOC_RE = re.compile(r"^<loc_(\d+)>$")
_PREGROUNDED_RE = re.compile(r"\(\s*([^()\[\]]+?)\s*\)\s*\[\s*(\d+)\s*\]")

TokenStream = list[str]


class NodeKind(Enum):
    PANEL = "panel"
    CHARACTER = "char"
    TEXT = "text"
    TAIL = "tail"


CLASS_TOKENS = {f"<{k.value}>": k for k in NodeKind}
_RESERVED = set(CLASS_TOKENS) | {EOS, GRND_OPEN, GRND_CLOSE}


class ParseError(ValueError):
    """Malformed token stream; carries the offending token index."""

    def __init__(self, index: int, reason: str):
        self.index = index
        self.reason = reason
        super().__init__(f"token {index}: {reason}")


def loc_token(k: int) -> str:
    if not 0 <= k <= 999:
        raise ValueError(f"location bin out of range: {k}")
    return f"<loc_{k}>"


def loc_value(token: str) -> int | None:
    """Bin index of a location token, or None if `token` is not one."""
    m = _LOC_RE.match(token)
    if not m:
        return None
    return int(m.group(1))


def is_reserved(token: str) -> bool:
    return token in _RESERVED or _LOC_RE.match(token) is not None


@dataclass(frozen=True)
class DetectionRecord:
    box: QuantizedBox
    kind: NodeKind
    order_index: int


@dataclass(frozen=True)
class OcrRecord:
    text: str
    box: QuantizedBox
    order_index: int

    def __post_init__(self) -> None:
        if not self.text or self.text != self.text.strip():
            raise ValueError(f"OCR text must be nonempty and trimmed: {self.text!r}")


@dataclass(frozen=True)
class PlainSegment:
    text: str


@dataclass(frozen=True)
class PhraseSegment:
    phrase: str
    boxes: tuple[QuantizedBox, ...]

    def __post_init__(self) -> None:
        if not self.boxes:
            raise ValueError(f"phrase {self.phrase!r} carries no boxes")


@dataclass(frozen=True)
class GroundedCaption:
    """Caption text partitioned into plain runs and character-referring phrases.

    Concatenating the segment texts (phrases included, markers excluded)
    reproduces the plain caption byte for byte.
    """

    segments: tuple[PlainSegment | PhraseSegment, ...]

    @property
    def text(self) -> str:
        return "".join(
            s.phrase if isinstance(s, PhraseSegment) else s.text for s in self.segments
        )

    @property
    def phrase_segments(self) -> list[PhraseSegment]:
        return [s for s in self.segments if isinstance(s, PhraseSegment)]


@dataclass(frozen=True)
class PregroundedPhrase:
    phrase: str
    ref_id: int


@dataclass(frozen=True)
class PregroundedCaption:
    """`( phrase ) [ ID ]` caption: phrases carry visual-prompt IDs, not boxes."""

    segments: tuple[PlainSegment | PregroundedPhrase, ...]
    warnings: tuple[str, ...] = ()

    @property
    def text(self) -> str:
        return "".join(
            s.phrase if isinstance(s, PregroundedPhrase) else s.text for s in self.segments
        )

    @property
    def phrases(self) -> list[PregroundedPhrase]:
        return [s for s in self.segments if isinstance(s, PregroundedPhrase)]


def _check_eos(tokens: TokenStream, index: int) -> None:
    """`index` points at the EOS token; anything after it is an error."""
    if index + 1 < len(tokens):
        raise ParseError(index + 1, "trailing tokens after EOS")


def _quantized(values: list[int], index: int) -> QuantizedBox:
    try:
        return QuantizedBox(*values)
    except GeometryError as e:
        raise ParseError(index, f"invalid location quad: {e}") from None


def parse_detection(tokens: TokenStream) -> list[DetectionRecord]:
    """Decode (loc x4, class)* </s> into records in emission order."""
    records: list[DetectionRecord] = []
    i = 0
    while True:
        if i >= len(tokens):
            raise ParseError(len(tokens), "missing EOS")
        if tokens[i] == EOS:
            _check_eos(tokens, i)
            return records
        quad: list[int] = []
        for j in range(4):
            if i >= len(tokens):
                raise ParseError(len(tokens), "missing EOS")
            k = loc_value(tokens[i])
            if k is None or k > 999:
                reason = f"expected location token, got {tokens[i]!r}"
                if j:
                    reason = f"dangling location tokens: {reason} at quad position {j + 1}/4"
                raise ParseError(i, reason)
            quad.append(k)
            i += 1
        if i >= len(tokens):
            raise ParseError(len(tokens), "missing EOS")
        kind = CLASS_TOKENS.get(tokens[i])
        if kind is None:
            raise ParseError(i, f"unknown class token {tokens[i]!r}")
        records.append(DetectionRecord(_quantized(quad, i - 1), kind, len(records)))
        i += 1


def serialize_detection(records: list[DetectionRecord]) -> TokenStream:
    tokens: TokenStream = []
    for r in records:
        tokens.extend(loc_token(k) for k in r.box.as_tuple())
        tokens.append(f"<{r.kind.value}>")
    tokens.append(EOS)
    return tokens


def parse_ocr(tokens: TokenStream) -> list[OcrRecord]:
    """Decode (word+, loc x4)* </s>; words join with single spaces."""
    records: list[OcrRecord] = []
    words: list[str] = []
    i = 0
    while True:
        if i >= len(tokens):
            raise ParseError(len(tokens), "missing EOS")
        tok = tokens[i]
        if tok == EOS:
            if words:
                raise ParseError(i, "text block without a trailing location quad")
            _check_eos(tokens, i)
            return records
        k = loc_value(tok)
        if k is not None:
            if k > 999:
                raise ParseError(i, f"location bin out of range: {tok!r}")
            if not words:
                raise ParseError(i, "location tokens with no preceding text")
            quad = [k]
            i += 1
            while len(quad) < 4:
                if i >= len(tokens):
                    raise ParseError(len(tokens), "missing EOS")
                k = loc_value(tokens[i])
                if k is None or k > 999:
                    raise ParseError(i, f"expected location token {len(quad) + 1}/4, got {tokens[i]!r}")
                quad.append(k)
                i += 1
            records.append(OcrRecord(" ".join(words), _quantized(quad, i - 1), len(records)))
            words = []
        elif tok in _RESERVED:
            raise ParseError(i, f"unexpected token {tok!r} in OCR stream")
        else:
            words.append(tok)
            i += 1


def serialize_ocr(records: list[OcrRecord]) -> TokenStream:
    tokens: TokenStream = []
    for r in records:
        words = r.text.split(" ")
        bad = next((w for w in words if not w or is_reserved(w)), None)
        if bad is not None:
            raise ValueError(f"OCR text not serializable as word tokens: {r.text!r} ({bad!r})")
        tokens.extend(words)
        tokens.extend(loc_token(k) for k in r.box.as_tuple())
    tokens.append(EOS)
    return tokens


def _parse_quads(tokens: TokenStream, i: int) -> tuple[list[QuantizedBox], int]:
    """Consume consecutive location quads starting at `i`."""
    boxes: list[QuantizedBox] = []
    while i < len(tokens) and loc_value(tokens[i]) is not None:
        quad: list[int] = []
        for j in range(4):
            if i >= len(tokens):
                raise ParseError(len(tokens), "missing EOS")
            k = loc_value(tokens[i])
            if k is None or k > 999:
                raise ParseError(i, f"incomplete location quad: expected token {j + 1}/4, got {tokens[i]!r}")
            quad.append(k)
            i += 1
        boxes.append(_quantized(quad, i - 1))
    return boxes, i


def parse_grounded_caption(tokens: TokenStream) -> GroundedCaption:
    """Decode a caption stream with <grnd>...</grnd> spans and location quads.

    The flattened segment text equals the caption formed by joining all word
    tokens with single spaces; joining spaces at phrase boundaries belong to
    the neighbouring plain segments so phrases stay clean.
    """
    # items: ("plain", words) | ("phrase", words, boxes)
    items: list[tuple] = []
    plain_words: list[str] = []
    i = 0
    while True:
        if i >= len(tokens):
            raise ParseError(len(tokens), "missing EOS")
        tok = tokens[i]
        if tok == EOS:
            _check_eos(tokens, i)
            break
        if tok == GRND_OPEN:
            if plain_words:
                items.append(("plain", plain_words))
                plain_words = []
            i += 1
            span_words: list[str] = []
            while True:
                if i >= len(tokens):
                    raise ParseError(len(tokens), "unclosed grounding span")
                tok = tokens[i]
                if tok == GRND_CLOSE:
                    break
                if tok == GRND_OPEN:
                    raise ParseError(i, "nested grounding span")
                if tok == EOS:
                    raise ParseError(i, "unclosed grounding span")
                if tok in CLASS_TOKENS or loc_value(tok) is not None:
                    raise ParseError(i, f"unexpected token {tok!r} inside grounding span")
                span_words.append(tok)
                i += 1
            if not span_words:
                raise ParseError(i, "empty grounding span")
            i += 1
            boxes, i = _parse_quads(tokens, i)
            if not boxes:
                at = min(i, len(tokens))
                raise ParseError(at, "grounding span with zero location quads")
            items.append(("phrase", span_words, boxes))
        elif tok == GRND_CLOSE:
            raise ParseError(i, "span close without open")
        elif loc_value(tok) is not None:
            raise ParseError(i, "location token outside a grounding context")
        elif tok in CLASS_TOKENS:
            raise ParseError(i, f"unexpected token {tok!r} in caption stream")
        else:
            plain_words.append(tok)
            i += 1
    if plain_words:
        items.append(("plain", plain_words))
    return _assemble_caption(items)


def _assemble_caption(items: list[tuple]) -> GroundedCaption:
    """Build segments whose concatenation is the space-joined caption."""
    all_words = [w for item in items for w in item[1]]
    caption = " ".join(all_words)
    # char span of each word in the joined caption
    spans: list[tuple[int, int]] = []
    pos = 0
    for w in all_words:
        spans.append((pos, pos + len(w)))
        pos += len(w) + 1
    segments: list[PlainSegment | PhraseSegment] = []
    cursor = 0  # char position consumed so far
    wi = 0  # word index
    for item in items:
        n = len(item[1])
        if item[0] == "phrase":
            start = spans[wi][0]
            end = spans[wi + n - 1][1]
            if start > cursor:
                segments.append(PlainSegment(caption[cursor:start]))
            segments.append(PhraseSegment(caption[start:end], tuple(item[2])))
            cursor = end
        wi += n
    if cursor < len(caption) or not segments:
        segments.append(PlainSegment(caption[cursor:]))
    return GroundedCaption(tuple(segments))


def serialize_grounded_caption(gc: GroundedCaption) -> TokenStream:
    tokens: TokenStream = []
    for seg in gc.segments:
        text = seg.phrase if isinstance(seg, PhraseSegment) else seg.text
        words = text.split()
        bad = next((w for w in words if is_reserved(w)), None)
        if bad is not None:
            raise ValueError(f"caption text not serializable as word tokens: {bad!r}")
        if isinstance(seg, PhraseSegment):
            if not words:
                raise ValueError("phrase segment with no words")
            tokens.append(GRND_OPEN)
            tokens.extend(words)
            tokens.append(GRND_CLOSE)
            for box in seg.boxes:
                tokens.extend(loc_token(k) for k in box.as_tuple())
        else:
            tokens.extend(words)
    tokens.append(EOS)
    return tokens


def parse_pregrounded(text: str) -> PregroundedCaption:
    """Extract `( phrase ) [ ID ]` references from a visual-prompting caption.

    Lenient by design: the upstream captioner occasionally breaks the format,
    so stray markers are kept as plain text and reported in `warnings`.
    """
    segments: list[PlainSegment | PregroundedPhrase] = []
    warnings: list[str] = []
    last = 0

    def emit_plain(chunk: str, offset: int) -> None:
        if chunk:
            segments.append(PlainSegment(chunk))
        for m in re.finditer(r"[()]", chunk):
            warnings.append(f"unmatched {m.group(0)!r} at offset {offset + m.start()}")

    for m in _PREGROUNDED_RE.finditer(text):
        emit_plain(text[last:m.start()], last)
        segments.append(PregroundedPhrase(m.group(1), int(m.group(2))))
        last = m.end()
    emit_plain(text[last:], last)
    if not segments:
        segments.append(PlainSegment(""))
    return PregroundedCaption(tuple(segments), tuple(warnings))
