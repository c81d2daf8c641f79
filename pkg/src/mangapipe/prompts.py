"""Prompt construction for captioning, prose generation and judging.

Every builder is pure and byte-deterministic; golden files under
tests/goldens pin the exact instantiations.  Lines with trailing spaces
are assembled from explicit "\\n" fragments so the bytes survive editors.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from enum import Enum


class NarrativeStyle(Enum):
    PROSE = "prose"
    SCREENPLAY = "screenplay"
    STORYBOOK = "children's storybook"
    POEM = "poem"


CAPTION_INSTRUCTION = (
    "Describe this image to me. Focus on the characters, their appearance, "
    "their actions, and the environment. Please ignore any text, dialogues, "
    "or speech bubbles in the image."
)

PROSE_HEADER = "I have a series of manga panel descriptions and dialogues.\n"

PROSE_PANEL_BLOCK = "\nPanel {number}\n\nDescription: {caption}\nDialogues: {transcript}\n"

PROSE_CLOSING = (
    "\nI want you to write a summary so that a blind or visually impaired person can understand the story. \n"
    "Make sure to stick to the provided details. All these panels belong to the same page so make sure \n"
    "your narrative is coherent. The format of the narrative should be a {style}."
)

EMPTY_DIALOGUES = "(none)"

JUDGE_TEMPLATE = (
    "You are trying to tell if a candidate caption/prose is describing the same image as a reference caption/prose. \n"
    "Given the following rubric, I want you to give me a score on a scale from 1-5.\n"
    "\n"
    "### Rubric for Evaluating Manga Panel Descriptions (1-5 Scale)\n"
    "\n"
    "1. **Severely Inaccurate (1):**\n"
    "   - The predicted caption/prose is mostly unrelated to the reference. Key elements are either missing or\n"
    "   incorrectly presented, and there are major contradictions that obscure the intended context.\n"
    "\n"
    "2. **Somewhat Off-Base (2):**\n"
    "   - The predicted caption/prose captures some correct ideas but overlooks many crucial details. Major inaccuracies\n"
    "   exist, such as incorrect character features or setting descriptions. The overall theme may slightly resemble\n"
    "   the reference but lacks precision.\n"
    "\n"
    "3. **Partially Accurate (3):**\n"
    "   - The predicted caption/prose includes several recognizable aspects of the reference but has important \n"
    "   inaccuracies. While it conveys the general idea, significant details about multiple \n"
    "   features like characters, actions, or settings may be misrepresented.\n"
    "\n"
    "4. **Mostly Accurate (4):**\n"
    "   - The predicted caption/prose captures most key elements of the reference accurately. Minor inaccuracies are \n"
    "   permissible as long as they do not significantly alter the overall understanding. Additional thematic elements\n"
    "   or details may be present if they enhance the scene without conflicting with its primary depiction.\n"
    "\n"
    "5. **Highly Accurate (5):**\n"
    "   - The predicted caption/prose is nearly identical to the reference in both content and context. It seamlessly\n"
    "   captures every detail, and any enhancements serve only to enrich the description without deviating from \n"
    "   the original meaning.\n"
    "\n"
    "Predicted caption/prose:\n"
    "\n"
    "{predicted}\n"
    "\n"
    "Reference caption/prose:\n"
    "\n"
    "{reference}\n"
    "\n"
    "Instructions:\n"
    "\n"
    "Output your response in a json with a key \"judgement\" that contains your analysis of the predicted caption/prose\n"
    "and a key \"score\" between 1 and 5 (decimal is allowed) that contains your score."
)


@dataclass(frozen=True)
class PanelRecord:
    """Per-panel input to the prose prompt: 1-based order, caption, dialogues."""

    panel_order: int
    caption: str
    dialogues: str = ""


@dataclass(frozen=True)
class JudgeVerdict:
    judgement: str
    score: float

    def __post_init__(self) -> None:
        if not 1.0 <= self.score <= 5.0:
            raise ValueError(f"judge score out of range [1, 5]: {self.score}")


class JudgeResponseError(ValueError):
    """Judge output could not be turned into a verdict; `code` says why."""

    def __init__(self, code: str, message: str):
        self.code = code
        super().__init__(message)


def caption_prompt() -> str:
    """The fixed per-panel captioning instruction, ignore-text directive included."""
    return CAPTION_INSTRUCTION


def prose_prompt(panels: list[PanelRecord], style: NarrativeStyle = NarrativeStyle.PROSE) -> str:
    """Structured prose-generation prompt over the page's panels.

    Panels must be ordered 1..N contiguously.  Panels without dialogue show
    "(none)"; multi-line dialogue excerpts are included newline-joined.
    Non-default styles swap only the final format clause.
    """
    if not panels:
        raise ValueError("prose prompt needs at least one panel")
    for i, p in enumerate(panels):
        if p.panel_order != i + 1:
            raise ValueError(
                f"panel orders must be contiguous from 1; position {i} has order {p.panel_order}"
            )
    parts = [PROSE_HEADER]
    for p in panels:
        parts.append(PROSE_PANEL_BLOCK.format(
            number=p.panel_order,
            caption=p.caption,
            transcript=p.dialogues if p.dialogues else EMPTY_DIALOGUES,
        ))
    parts.append(PROSE_CLOSING.format(style=style.value))
    return "".join(parts)


def judge_prompt(predicted: str, reference: str) -> str:
    """Rubric-based scoring prompt comparing a prediction against its reference."""
    if not predicted:
        raise ValueError("predicted text must be nonempty")
    if not reference:
        raise ValueError("reference text must be nonempty")
    return JUDGE_TEMPLATE.format(predicted=predicted, reference=reference)


_FENCE_RE = re.compile(r"^```[a-zA-Z0-9_-]*\s*$")


def _balanced_objects(raw: str):
    """Yield candidate JSON object substrings, outermost braces balanced."""
    depth = 0
    start = -1
    in_string = False
    escape = False
    for i, ch in enumerate(raw):
        if in_string:
            if escape:
                escape = False
            elif ch == "\\":
                escape = True
            elif ch == '"':
                in_string = False
            continue
        if ch == '"':
            if depth > 0:
                in_string = True
        elif ch == "{":
            if depth == 0:
                start = i
            depth += 1
        elif ch == "}":
            if depth > 0:
                depth -= 1
                if depth == 0:
                    yield raw[start:i + 1]


def parse_judge_response(raw: str, strict: bool = False) -> JudgeVerdict:
    """Extract and validate the judge's JSON verdict.

    Lenient mode (default) takes the first balanced JSON object in `raw`,
    tolerating code fences and surrounding prose.  Strict mode requires the
    whole (stripped) response to be exactly one JSON object.
    """
    obj = None
    if strict:
        try:
            obj = json.loads(raw.strip())
        except json.JSONDecodeError:
            raise JudgeResponseError("no_json", "response is not a single JSON object")
        if not isinstance(obj, dict):
            raise JudgeResponseError("no_json", "response JSON is not an object")
    else:
        text = "\n".join(line for line in raw.splitlines() if not _FENCE_RE.match(line))
        for candidate in _balanced_objects(text):
            try:
                parsed = json.loads(candidate)
            except json.JSONDecodeError:
                continue
            if isinstance(parsed, dict):
                obj = parsed
                break
        if obj is None:
            raise JudgeResponseError("no_json", "no JSON object found in response")

    if "judgement" not in obj:
        raise JudgeResponseError("missing_key", 'response JSON lacks key "judgement"')
    if "score" not in obj:
        raise JudgeResponseError("missing_key", 'response JSON lacks key "score"')
    judgement = obj["judgement"]
    score = obj["score"]
    if not isinstance(judgement, str):
        raise JudgeResponseError("bad_judgement", "judgement is not a string")
    if isinstance(score, bool) or not isinstance(score, (int, float)):
        raise JudgeResponseError("bad_score", f"score is not numeric: {score!r}")
    if not 1.0 <= float(score) <= 5.0:
        raise JudgeResponseError("score_out_of_range", f"score {score} outside [1, 5]")
    return JudgeVerdict(judgement=judgement, score=float(score))


def serialize_verdict(verdict: JudgeVerdict) -> str:
    return json.dumps({"judgement": verdict.judgement, "score": verdict.score})
