"""Fixture-replaying mock of the v1 inference/chat protocol.

The fixture directory holds a manifest mapping (task, key) to a response
file; the key is the sha256 hex of the request's raw image bytes, or of the
user text for imageless chat calls, so replay is path-independent:

    manifest.json   {"version": 1, "responses": [
                        {"task": "detect", "key": "<sha256>", "file": "detect_0.json"}, ...]}

Responses are served bit-exactly from the files.  Requests are validated
against the same schema the real bridge enforces, so both sides return
identical error bodies: {"error": {"code": ..., "message": ...}}.
"""

from __future__ import annotations

import base64
import binascii
import hashlib
import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

PROTOCOL_VERSION = "v1"
TASKS = ("detect", "ocr", "ground", "chat")


def fixture_key(image: bytes | None, user_text: str | None = None) -> str:
    """Content hash used to look up canned responses."""
    if image is not None:
        return hashlib.sha256(image).hexdigest()
    if user_text is not None:
        return hashlib.sha256(user_text.encode("utf-8")).hexdigest()
    raise ValueError("fixture key needs image bytes or user text")


class FixtureError(ValueError):
    """Malformed fixture manifest; raised at server startup."""


def _load_manifest(fixture_dir: Path) -> dict[tuple[str, str], bytes]:
    manifest_path = fixture_dir / "manifest.json"
    if not manifest_path.is_file():
        raise FixtureError(f"missing manifest: {manifest_path}")
    try:
        doc = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise FixtureError(f"manifest is not valid JSON: {e}") from None
    if not isinstance(doc, dict) or doc.get("version") != 1:
        raise FixtureError(f"unsupported manifest version: {doc.get('version')!r}")
    responses: dict[tuple[str, str], bytes] = {}
    for i, entry in enumerate(doc.get("responses", [])):
        if not isinstance(entry, dict):
            raise FixtureError(f"responses[{i}] is not an object")
        task = entry.get("task")
        key = entry.get("key")
        file = entry.get("file")
        if task not in TASKS:
            raise FixtureError(f"responses[{i}]: unknown task {task!r}")
        if not isinstance(key, str) or not key:
            raise FixtureError(f"responses[{i}]: missing key")
        path = fixture_dir / str(file)
        if not path.is_file():
            raise FixtureError(f"responses[{i}]: missing response file {path}")
        body = path.read_bytes()
        try:
            json.loads(body.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise FixtureError(f"responses[{i}]: response file is not JSON: {e}") from None
        responses[(task, key)] = body
    return responses


def validate_infer_body(task: str, body) -> tuple[bytes, str | None] | str:
    """Check an inference request body; returns (image_bytes, caption) or an
    error message.  The bridge mirrors these rules exactly."""
    if not isinstance(body, dict):
        return "request body must be a JSON object"
    allowed = {"image", "width", "height"} | ({"caption"} if task == "ground" else set())
    unknown = set(body) - allowed
    if unknown:
        return f"unexpected fields: {sorted(unknown)}"
    image_b64 = body.get("image")
    if not isinstance(image_b64, str) or not image_b64:
        return "field 'image' must be a nonempty base64 string"
    try:
        image = base64.b64decode(image_b64, validate=True)
    except (binascii.Error, ValueError):
        return "field 'image' is not valid base64"
    for name in ("width", "height"):
        v = body.get(name)
        if not isinstance(v, int) or isinstance(v, bool) or v < 1:
            return f"field {name!r} must be a positive integer"
    caption = body.get("caption")
    if task == "ground":
        if not isinstance(caption, str) or not caption:
            return "ground requests require a nonempty 'caption'"
    return image, caption


def validate_chat_body(body) -> tuple[bytes | None, str] | str:
    if not isinstance(body, dict):
        return "request body must be a JSON object"
    unknown = set(body) - {"user", "system", "image"}
    if unknown:
        return f"unexpected fields: {sorted(unknown)}"
    user = body.get("user")
    if not isinstance(user, str) or not user:
        return "field 'user' must be a nonempty string"
    if "system" in body and not isinstance(body["system"], str):
        return "field 'system' must be a string"
    image = None
    if "image" in body:
        if not isinstance(body["image"], str):
            return "field 'image' must be a base64 string"
        try:
            image = base64.b64decode(body["image"], validate=True)
        except (binascii.Error, ValueError):
            return "field 'image' is not valid base64"
    return image, user


class _Handler(BaseHTTPRequestHandler):
    server_version = "mangapipe-mock/0.1"
    protocol_version = "HTTP/1.1"

    def log_message(self, format, *args):  # keep test output quiet
        pass

    def _send(self, status: int, body: bytes) -> None:
        if self.server.delay:
            time.sleep(self.server.delay)
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _send_error_body(self, status: int, code: str, message: str, **extra) -> None:
        err = {"error": {"code": code, "message": message, **extra}}
        self._send(status, json.dumps(err).encode("utf-8"))

    def do_GET(self):
        if self.path == f"/{PROTOCOL_VERSION}/health":
            body = json.dumps({
                "status": "ok",
                "protocol": PROTOCOL_VERSION,
                "backend": "mock",
                "tasks": list(TASKS),
                "association_scores": True,
            }).encode("utf-8")
            self._send(200, body)
        else:
            self._send_error_body(404, "not_found", f"unknown endpoint {self.path}")

    def do_POST(self):
        parts = self.path.strip("/").split("/")
        if len(parts) != 2 or parts[0] != PROTOCOL_VERSION or parts[1] not in TASKS:
            self._send_error_body(404, "not_found", f"unknown endpoint {self.path}")
            return
        task = parts[1]
        try:
            length = int(self.headers.get("Content-Length", "0"))
            raw = self.rfile.read(length)
            body = json.loads(raw.decode("utf-8"))
        except (ValueError, UnicodeDecodeError):
            self._send_error_body(400, "invalid_request", "request body is not valid JSON")
            return

        if task == "chat":
            checked = validate_chat_body(body)
            if isinstance(checked, str):
                self._send_error_body(400, "invalid_request", checked)
                return
            image, user = checked
            key = fixture_key(image, user)
        else:
            checked = validate_infer_body(task, body)
            if isinstance(checked, str):
                self._send_error_body(400, "invalid_request", checked)
                return
            image, _ = checked
            key = fixture_key(image)

        canned = self.server.responses.get((task, key))
        if canned is None:
            self._send_error_body(404, "not_found", f"no fixture for task {task!r}", key=key)
            return
        self._send(200, canned)


class _Server(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, addr, responses: dict[tuple[str, str], bytes], delay: float):
        super().__init__(addr, _Handler)
        self.responses = responses
        self.delay = delay


class MockServer:
    """Running fixture server; use as a context manager or call stop()."""

    def __init__(self, fixture_dir, port: int = 0, delay: float = 0.0):
        self.fixture_dir = Path(fixture_dir)
        self._server = _Server(("127.0.0.1", port), _load_manifest(self.fixture_dir), delay)
        self.port = self._server.server_address[1]
        self.base_url = f"http://127.0.0.1:{self.port}"
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        self._thread.join(timeout=5)

    def __enter__(self) -> "MockServer":
        return self

    def __exit__(self, *exc) -> None:
        self.stop()


def mock_serve(fixture_dir, port: int = 0, delay: float = 0.0) -> MockServer:
    """Start a mock server on `port` (0 picks a free one) and return the handle."""
    return MockServer(fixture_dir, port=port, delay=delay)
