from __future__ import annotations

import random
import string

import pytest

from mangapipe.geometry import QuantizedBox
from mangapipe.tokens import (
    EOS,
    GRND_CLOSE,
    GRND_OPEN,
    DetectionRecord,
    GroundedCaption,
    NodeKind,
    OcrRecord,
    ParseError,
    PhraseSegment,
    PlainSegment,
    PregroundedPhrase,
    loc_token,
    parse_detection,
    parse_grounded_caption,
    parse_ocr,
    parse_pregrounded,
    serialize_detection,
    serialize_grounded_caption,
    serialize_ocr,
)

WORDS = ["a", "the", "boy", "girl", "man", "woman", "runs", "waves", "smiles",
         "tall", "old", "dark", "figure", "hat", "storm", "quietly", "says."]


def rand_qbox(rng: random.Random) -> QuantizedBox:
    x0, x1 = sorted(rng.randrange(1000) for _ in range(2))
    y0, y1 = sorted(rng.randrange(1000) for _ in range(2))
    return QuantizedBox(x0, y0, x1, y1)


def rand_detection_records(rng: random.Random, n: int) -> list[DetectionRecord]:
    kinds = list(NodeKind)
    return [DetectionRecord(rand_qbox(rng), rng.choice(kinds), i) for i in range(n)]


def rand_ocr_records(rng: random.Random, n: int) -> list[OcrRecord]:
    return [
        OcrRecord(" ".join(rng.choices(WORDS, k=rng.randint(1, 5))), rand_qbox(rng), i)
        for i in range(n)
    ]


def rand_grounded(rng: random.Random) -> GroundedCaption:
    tokens: list[str] = []
    for _ in range(rng.randint(1, 5)):
        if rng.random() < 0.5:
            tokens.extend(rng.choices(WORDS, k=rng.randint(1, 4)))
        else:
            tokens.append(GRND_OPEN)
            tokens.extend(rng.choices(WORDS, k=rng.randint(1, 3)))
            tokens.append(GRND_CLOSE)
            for _ in range(rng.randint(1, 3)):
                tokens.extend(loc_token(k) for k in rand_qbox(rng).as_tuple())
    if not tokens:
        tokens = ["quiet"]
    tokens.append(EOS)
    return parse_grounded_caption(tokens)


class TestDetection:
    def test_empty_page(self):
        assert parse_detection([EOS]) == []

    def test_single_panel(self):
        tokens = ["<loc_10>", "<loc_20>", "<loc_500>", "<loc_700>", "<panel>", EOS]
        records = parse_detection(tokens)
        assert records == [DetectionRecord(QuantizedBox(10, 20, 500, 700), NodeKind.PANEL, 0)]
        assert serialize_detection(records) == tokens

    def test_three_locs_then_class_errors_at_index_3(self):
        tokens = ["<loc_1>", "<loc_2>", "<loc_3>", "<char>", EOS]
        with pytest.raises(ParseError) as e:
            parse_detection(tokens)
        assert e.value.index == 3

    def test_unknown_class_token(self):
        tokens = ["<loc_1>", "<loc_2>", "<loc_3>", "<loc_4>", "<blob>", EOS]
        with pytest.raises(ParseError, match="unknown class token"):
            parse_detection(tokens)

    def test_missing_eos(self):
        with pytest.raises(ParseError) as e:
            parse_detection(["<loc_1>", "<loc_2>", "<loc_3>", "<loc_4>", "<char>"])
        assert e.value.index == 5

    def test_trailing_after_eos(self):
        with pytest.raises(ParseError, match="trailing"):
            parse_detection([EOS, "<panel>"])

    def test_empty_serialize(self):
        assert serialize_detection([]) == [EOS]

    def test_order_index_is_position(self):
        rng = random.Random(0)
        records = rand_detection_records(rng, 12)
        parsed = parse_detection(serialize_detection(records))
        assert [r.order_index for r in parsed] == list(range(12))
        assert parsed == records

    def test_roundtrip_fuzz(self):
        rng = random.Random(1)
        for _ in range(300):
            records = rand_detection_records(rng, rng.randint(0, 15))
            assert parse_detection(serialize_detection(records)) == records


class TestOcr:
    def test_empty(self):
        assert parse_ocr([EOS]) == []

    def test_two_words(self):
        tokens = ["Hello", "there", "<loc_1>", "<loc_2>", "<loc_3>", "<loc_4>", EOS]
        records = parse_ocr(tokens)
        assert records == [OcrRecord("Hello there", QuantizedBox(1, 2, 3, 4), 0)]
        assert serialize_ocr(records) == tokens

    def test_loc_without_text(self):
        with pytest.raises(ParseError, match="no preceding text") as e:
            parse_ocr(["<loc_1>", "<loc_2>", "<loc_3>", "<loc_4>", EOS])
        assert e.value.index == 0

    def test_short_quad(self):
        with pytest.raises(ParseError):
            parse_ocr(["hi", "<loc_1>", "<loc_2>", EOS])

    def test_text_without_quad(self):
        with pytest.raises(ParseError, match="without a trailing location quad"):
            parse_ocr(["dangling", EOS])

    def test_roundtrip_fuzz(self):
        rng = random.Random(2)
        for _ in range(300):
            records = rand_ocr_records(rng, rng.randint(0, 8))
            assert parse_ocr(serialize_ocr(records)) == records

    def test_serialize_rejects_reserved_words(self):
        rec = OcrRecord("hello </s>", QuantizedBox(0, 0, 1, 1), 0)
        with pytest.raises(ValueError, match="not serializable"):
            serialize_ocr([rec])


class TestGroundedCaption:
    def test_zero_spans_single_plain(self):
        gc = parse_grounded_caption(["just", "scenery", EOS])
        assert gc.segments == (PlainSegment("just scenery"),)
        assert gc.text == "just scenery"

    def test_phrase_then_plain(self):
        tokens = [GRND_OPEN, "the", "boy", GRND_CLOSE,
                  "<loc_1>", "<loc_2>", "<loc_3>", "<loc_4>", "runs", EOS]
        gc = parse_grounded_caption(tokens)
        assert gc.segments == (
            PhraseSegment("the boy", (QuantizedBox(1, 2, 3, 4),)),
            PlainSegment(" runs"),
        )
        assert gc.text == "the boy runs"
        assert serialize_grounded_caption(gc) == tokens

    def test_two_quads_one_phrase(self):
        tokens = [GRND_OPEN, "they", GRND_CLOSE,
                  "<loc_1>", "<loc_2>", "<loc_3>", "<loc_4>",
                  "<loc_5>", "<loc_6>", "<loc_7>", "<loc_8>", EOS]
        gc = parse_grounded_caption(tokens)
        assert len(gc.phrase_segments) == 1
        assert gc.phrase_segments[0].boxes == (QuantizedBox(1, 2, 3, 4), QuantizedBox(5, 6, 7, 8))

    def test_unbalanced_markers(self):
        with pytest.raises(ParseError, match="unclosed"):
            parse_grounded_caption([GRND_OPEN, "boy", EOS])
        with pytest.raises(ParseError, match="close without open"):
            parse_grounded_caption(["boy", GRND_CLOSE, EOS])
        with pytest.raises(ParseError, match="nested"):
            parse_grounded_caption([GRND_OPEN, GRND_OPEN, "x", GRND_CLOSE, EOS])

    def test_span_with_zero_quads(self):
        with pytest.raises(ParseError, match="zero location quads"):
            parse_grounded_caption([GRND_OPEN, "boy", GRND_CLOSE, "runs", EOS])

    def test_wrong_arity_quad(self):
        with pytest.raises(ParseError, match="incomplete location quad"):
            parse_grounded_caption([GRND_OPEN, "boy", GRND_CLOSE,
                                    "<loc_1>", "<loc_2>", "runs", EOS])

    def test_stray_location_token(self):
        with pytest.raises(ParseError, match="outside a grounding context"):
            parse_grounded_caption(["boy", "<loc_1>", EOS])

    def test_adjacent_phrases_get_space_segment(self):
        tokens = [GRND_OPEN, "he", GRND_CLOSE, "<loc_1>", "<loc_1>", "<loc_2>", "<loc_2>",
                  GRND_OPEN, "she", GRND_CLOSE, "<loc_3>", "<loc_3>", "<loc_4>", "<loc_4>", EOS]
        gc = parse_grounded_caption(tokens)
        assert [type(s).__name__ for s in gc.segments] == [
            "PhraseSegment", "PlainSegment", "PhraseSegment"]
        assert gc.segments[1].text == " "
        assert gc.text == "he she"

    def test_flatten_invariant_fuzz(self):
        rng = random.Random(3)
        for _ in range(200):
            gc = rand_grounded(rng)
            flat = "".join(
                s.phrase if isinstance(s, PhraseSegment) else s.text for s in gc.segments)
            assert flat == gc.text
            assert parse_grounded_caption(serialize_grounded_caption(gc)) == gc


class TestNoPanicFuzz:
    ALPHABET = (
        [EOS, GRND_OPEN, GRND_CLOSE, "<panel>", "<char>", "<text>", "<tail>", "<blob>",
         "<loc_0>", "<loc_7>", "<loc_999>", "<loc_1000>", "<loc_-1>", "word", "x."]
        + list(string.ascii_lowercase[:6])
    )

    @pytest.mark.parametrize("parser", [parse_detection, parse_ocr, parse_grounded_caption])
    def test_arbitrary_streams_raise_parse_error_only(self, parser):
        rng = random.Random(99)
        for _ in range(2000):
            tokens = rng.choices(self.ALPHABET, k=rng.randint(0, 12))
            try:
                parser(tokens)
            except ParseError as e:
                assert 0 <= e.index <= len(tokens)
                assert e.reason


class TestPregrounded:
    def test_bracket_id_format(self):
        pg = parse_pregrounded("A ( tall man ) [ 3 ] waves.")
        assert pg.phrases == [PregroundedPhrase("tall man", 3)]
        assert pg.text == "A tall man waves."
        assert pg.warnings == ()

    def test_no_markers(self):
        pg = parse_pregrounded("Nothing special here.")
        assert pg.segments == (PlainSegment("Nothing special here."),)
        assert pg.warnings == ()

    def test_duplicate_phrases_in_order(self):
        pg = parse_pregrounded("( a ) [ 1 ] and ( a ) [ 2 ]")
        assert [(p.phrase, p.ref_id) for p in pg.phrases] == [("a", 1), ("a", 2)]

    def test_unmatched_paren_is_lenient(self):
        pg = parse_pregrounded("A ( broken marker waves.")
        assert pg.phrases == []
        assert pg.text == "A ( broken marker waves."
        assert len(pg.warnings) == 1
        assert "offset 2" in pg.warnings[0]

    def test_tight_format_variant(self):
        pg = parse_pregrounded("(boy)[2] runs")
        assert pg.phrases == [PregroundedPhrase("boy", 2)]
        assert pg.text == "boy runs"

    def test_empty_string(self):
        pg = parse_pregrounded("")
        assert pg.text == ""
        assert pg.phrases == []
