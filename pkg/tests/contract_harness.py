"""Executable protocol contract: runs the shared corpus cases against any
server implementing the v1 wire protocol and checks structural expectations.

The TypeScript bridge runs the exact same corpus through its own harness;
keeping the checks structural (grammar, shapes, error codes) lets both a
fixture replayer and a live backend pass bit-identical requirements.
"""

from __future__ import annotations

import json
import urllib.error
import urllib.request

from mangapipe.fixtures import substitute_case_body
from mangapipe.tokens import (
    NodeKind,
    parse_detection,
    parse_grounded_caption,
    parse_ocr,
)


def run_case(base_url: str, corpus: dict, case: dict) -> None:
    url = base_url.rstrip("/") + case["path"]
    method = case["method"]
    expect = case["expect"]

    if method == "GET":
        req = urllib.request.Request(url, method="GET")
    else:
        if "raw_body" in case:
            data = case["raw_body"].encode("utf-8")
        else:
            data = json.dumps(substitute_case_body(case.get("body", {}), corpus)).encode("utf-8")
        req = urllib.request.Request(url, data=data,
                                     headers={"Content-Type": "application/json"},
                                     method="POST")
    try:
        with urllib.request.urlopen(req, timeout=30) as resp:
            status = resp.status
            content_type = resp.headers.get("Content-Type", "")
            raw = resp.read()
    except urllib.error.HTTPError as e:
        status = e.code
        content_type = e.headers.get("Content-Type", "")
        raw = e.read()

    assert status == expect["status"], (
        f"{case['name']}: status {status}, expected {expect['status']}: {raw[:200]!r}")
    assert content_type.startswith("application/json"), (
        f"{case['name']}: content-type {content_type!r}")
    body = json.loads(raw.decode("utf-8"))

    if "error_code" in expect:
        assert isinstance(body.get("error"), dict), f"{case['name']}: missing error object"
        assert body["error"].get("code") == expect["error_code"], (
            f"{case['name']}: error code {body['error'].get('code')!r}")
        assert isinstance(body["error"].get("message"), str) and body["error"]["message"]

    if "tokens_grammar" in expect:
        tokens = body.get("tokens")
        assert isinstance(tokens, list) and all(isinstance(t, str) for t in tokens), (
            f"{case['name']}: malformed tokens")
        grammar = expect["tokens_grammar"]
        if grammar == "detect":
            parse_detection(tokens)
        elif grammar == "ocr":
            parse_ocr(tokens)
        elif grammar == "ground":
            parse_grounded_caption(tokens)
        else:
            raise AssertionError(f"unknown grammar {grammar!r}")

    if expect.get("scores_match_tokens"):
        records = parse_detection(body["tokens"])
        counts = {k: sum(1 for r in records if r.kind is k) for k in NodeKind}
        expected_shapes = {
            "text_char": [counts[NodeKind.TEXT], counts[NodeKind.CHARACTER]],
            "char_char": [counts[NodeKind.CHARACTER], counts[NodeKind.CHARACTER]],
            "text_tail": [counts[NodeKind.TEXT], counts[NodeKind.TAIL]],
        }
        scores = body.get("scores")
        assert isinstance(scores, dict), f"{case['name']}: missing scores"
        for name, shape in expected_shapes.items():
            block = scores.get(name)
            assert isinstance(block, dict), f"{case['name']}: missing scores.{name}"
            assert list(block.get("shape", [])) == shape, (
                f"{case['name']}: scores.{name} shape {block.get('shape')} != {shape}")
            data = block.get("data")
            assert isinstance(data, list) and len(data) == shape[0] * shape[1]
            assert all(isinstance(v, (int, float)) and 0.0 <= v <= 1.0 for v in data)

    if expect.get("health_descriptor"):
        assert body.get("status") == "ok"
        assert body.get("protocol") == "v1"
        tasks = body.get("tasks")
        assert isinstance(tasks, list) and all(isinstance(t, str) for t in tasks)
        assert {"detect", "ocr", "ground"} <= set(tasks)
        assert isinstance(body.get("association_scores"), bool)


def run_corpus(base_url: str, corpus: dict) -> list[str]:
    """Run every case; returns the case names (raises on first failure)."""
    names = []
    for case in corpus["cases"]:
        run_case(base_url, corpus, case)
        names.append(case["name"])
    return names
