"""HTTP+JSON clients for the inference server (detect / OCR / ground) and a
chat-completions-style endpoint (captioning, prose, judging).

Protocol v1, JSON bodies over plain POSTs:

    POST {infer}/v1/detect  {"image": b64, "width": W, "height": H}
        -> {"tokens": [...], "scores": {"text_char": {"shape": [r, c], "data": [...]}, ...}}
    POST {infer}/v1/ocr     {"image": b64, "width": W, "height": H}
        -> {"tokens": [...]}
    POST {infer}/v1/ground  {"image": b64, "width": W, "height": H, "caption": str}
        -> {"tokens": [...]}
    POST {chat}/v1/chat     {"user": str, "system"?: str, "image"?: b64}
        -> {"text": str}
    GET  {base}/v1/health
        -> {"status": "ok", "protocol": "v1", "tasks": [...], "association_scores": bool}

Score matrices travel as dense row-major float arrays with explicit shape
fields, which keeps empty kinds unambiguous.  Errors come back as
{"error": {"code": ..., "message": ...}}.

Transport failures (connection errors, timeouts, 5xx) are retried with
exponential backoff; protocol violations (malformed bodies, unparseable
tokens, shape mismatches, 4xx refusals) are never retried and surface the
raw payload.
"""

from __future__ import annotations

import base64
import json
import os
import time
import urllib.error
import urllib.request
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .geometry import ImageDims
from .page_graph import ScoreTable
from .tokens import (
    DetectionRecord,
    NodeKind,
    ParseError,
    parse_detection,
    parse_grounded_caption,
    parse_ocr,
)

PROTOCOL_VERSION = "v1"

ENV_INFER_URL = "MANGAPIPE_INFER_URL"
ENV_CHAT_URL = "MANGAPIPE_CHAT_URL"
ENV_CHAT_KEY = "MANGAPIPE_CHAT_KEY"

DEFAULT_TIMEOUT = 60.0
DEFAULT_ATTEMPTS = 3
DEFAULT_BACKOFF = 0.25


class Task(Enum):
    DETECT = "detect"
    OCR = "ocr"
    GROUND = "ground"


class TransportError(Exception):
    """Network-level failure (connect, timeout, 5xx); safe to retry."""


class ProtocolError(Exception):
    """The server answered, but outside the protocol contract.  Not retried."""

    def __init__(self, message: str, payload=None):
        self.payload = payload
        super().__init__(message)


@dataclass(frozen=True)
class InferenceRequest:
    task: Task
    image: bytes
    dims: ImageDims
    caption: str | None = None

    def __post_init__(self) -> None:
        if self.task is Task.GROUND and not self.caption:
            raise ValueError("GROUND requests require a caption")
        if self.task is not Task.GROUND and self.caption is not None:
            raise ValueError(f"{self.task.value} requests must not carry a caption")


@dataclass(frozen=True)
class InferenceResponse:
    tokens: list[str]
    scores: ScoreTable | None = None  # present iff task == DETECT
    records: list[DetectionRecord] | None = None


@dataclass(frozen=True)
class ChatRequest:
    user: str
    system: str | None = None
    image: bytes | None = None

    def __post_init__(self) -> None:
        if not self.user:
            raise ValueError("chat request needs a nonempty user message")


@dataclass(frozen=True)
class ChatResponse:
    text: str


def encode_scores(table: ScoreTable) -> dict:
    def block(m: np.ndarray) -> dict:
        return {"shape": [int(m.shape[0]), int(m.shape[1])],
                "data": [float(v) for v in m.reshape(-1)]}
    return {
        "text_char": block(table.text_char),
        "char_char": block(table.char_char),
        "text_tail": block(table.text_tail),
    }


def decode_scores(obj, counts: dict[NodeKind, int]) -> ScoreTable:
    """Rebuild a ScoreTable from wire blocks, checking shapes against the
    parsed node counts."""
    if not isinstance(obj, dict):
        raise ProtocolError("scores must be an object", obj)
    expected = {
        "text_char": (counts[NodeKind.TEXT], counts[NodeKind.CHARACTER]),
        "char_char": (counts[NodeKind.CHARACTER], counts[NodeKind.CHARACTER]),
        "text_tail": (counts[NodeKind.TEXT], counts[NodeKind.TAIL]),
    }
    matrices = {}
    for name, shape in expected.items():
        block = obj.get(name)
        if not isinstance(block, dict) or "shape" not in block or "data" not in block:
            raise ProtocolError(f"scores.{name} missing shape/data", obj)
        got = tuple(block["shape"])
        if got != shape:
            raise ProtocolError(f"scores.{name} has shape {list(got)}, expected {list(shape)}", obj)
        data = block["data"]
        if not isinstance(data, list) or len(data) != shape[0] * shape[1]:
            raise ProtocolError(f"scores.{name} data length does not match shape", obj)
        matrices[name] = np.asarray(data, dtype=float).reshape(shape)
    try:
        return ScoreTable(matrices["text_char"], matrices["char_char"], matrices["text_tail"],
                          counts[NodeKind.TEXT], counts[NodeKind.CHARACTER], counts[NodeKind.TAIL])
    except ValueError as e:
        raise ProtocolError(f"invalid score table: {e}", obj) from None


def _post_json(url: str, body: dict, timeout: float, attempts: int, backoff: float,
               api_key: str | None = None) -> dict:
    payload = json.dumps(body).encode("utf-8")
    headers = {"Content-Type": "application/json"}
    if api_key:
        headers["Authorization"] = f"Bearer {api_key}"
    last_transport: Exception | None = None
    for attempt in range(attempts):
        if attempt:
            time.sleep(backoff * (2 ** (attempt - 1)))
        req = urllib.request.Request(url, data=payload, headers=headers, method="POST")
        try:
            with urllib.request.urlopen(req, timeout=timeout) as resp:
                raw = resp.read()
        except urllib.error.HTTPError as e:
            raw = e.read()
            if e.code >= 500:
                last_transport = TransportError(f"{url}: server error {e.code}: {raw[:200]!r}")
                continue
            raise ProtocolError(f"{url}: request refused with {e.code}",
                                _maybe_json(raw)) from None
        except (urllib.error.URLError, TimeoutError, ConnectionError, OSError) as e:
            last_transport = TransportError(f"{url}: {e}")
            continue
        return _parse_body(url, raw)
    raise last_transport if last_transport else TransportError(f"{url}: no attempts made")


def _maybe_json(raw: bytes):
    try:
        return json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        return raw


def _parse_body(url: str, raw: bytes) -> dict:
    try:
        body = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise ProtocolError(f"{url}: response is not JSON", raw) from None
    if not isinstance(body, dict):
        raise ProtocolError(f"{url}: response is not a JSON object", body)
    return body


def infer(endpoint: str, request: InferenceRequest, *, timeout: float = DEFAULT_TIMEOUT,
          attempts: int = DEFAULT_ATTEMPTS, backoff: float = DEFAULT_BACKOFF) -> InferenceResponse:
    """Run one inference task and validate the response against the protocol.

    Token streams are parsed with the task's grammar before returning, and
    detection score shapes are checked against the parsed node counts, so a
    successful return is known-well-formed.
    """
    body = {
        "image": base64.b64encode(request.image).decode("ascii"),
        "width": request.dims.width,
        "height": request.dims.height,
    }
    if request.task is Task.GROUND:
        body["caption"] = request.caption
    url = f"{endpoint.rstrip('/')}/{PROTOCOL_VERSION}/{request.task.value}"
    obj = _post_json(url, body, timeout, attempts, backoff)
    tokens = obj.get("tokens")
    if not isinstance(tokens, list) or not all(isinstance(t, str) for t in tokens):
        raise ProtocolError(f"{url}: missing or malformed tokens", obj)
    try:
        if request.task is Task.DETECT:
            records = parse_detection(tokens)
        elif request.task is Task.OCR:
            parse_ocr(tokens)
            records = None
        else:
            parse_grounded_caption(tokens)
            records = None
    except ParseError as e:
        raise ProtocolError(f"{url}: unparseable tokens: {e}", obj) from None
    scores = None
    if request.task is Task.DETECT:
        counts = {k: sum(1 for r in records if r.kind is k) for k in NodeKind}
        scores = decode_scores(obj.get("scores"), counts)
    return InferenceResponse(tokens=list(tokens), scores=scores, records=records)


def chat(endpoint: str, request: ChatRequest, *, timeout: float = DEFAULT_TIMEOUT,
         attempts: int = DEFAULT_ATTEMPTS, backoff: float = DEFAULT_BACKOFF,
         api_key: str | None = None) -> ChatResponse:
    """Send one chat call; an empty response text is a protocol violation."""
    body: dict = {"user": request.user}
    if request.system is not None:
        body["system"] = request.system
    if request.image is not None:
        body["image"] = base64.b64encode(request.image).decode("ascii")
    url = f"{endpoint.rstrip('/')}/{PROTOCOL_VERSION}/chat"
    key = api_key if api_key is not None else os.environ.get(ENV_CHAT_KEY)
    obj = _post_json(url, body, timeout, attempts, backoff, api_key=key)
    text = obj.get("text")
    if not isinstance(text, str) or not text:
        raise ProtocolError(f"{url}: missing or empty response text", obj)
    return ChatResponse(text=text)


def health(endpoint: str, *, timeout: float = DEFAULT_TIMEOUT) -> dict:
    url = f"{endpoint.rstrip('/')}/{PROTOCOL_VERSION}/health"
    try:
        with urllib.request.urlopen(url, timeout=timeout) as resp:
            raw = resp.read()
    except (urllib.error.URLError, TimeoutError, ConnectionError, OSError) as e:
        raise TransportError(f"{url}: {e}") from None
    return _parse_body(url, raw)
