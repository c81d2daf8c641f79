"""Cross-language check: the Python engine client consuming the TypeScript
bridge over the wire.  Skipped when node or the built bridge is absent, so
the primary suite never depends on the secondary component.
"""

from __future__ import annotations

import shutil
import socket
import subprocess
import time

import pytest

from mangapipe import client as mc
from mangapipe.fixtures import contract_image_bytes
from mangapipe.geometry import ImageDims

from contract_harness import run_corpus


def _bridge_available(repo_dir) -> bool:
    return shutil.which("node") is not None and (repo_dir / "bridge" / "dist" / "index.js").is_file()


@pytest.fixture(scope="module")
def bridge_url(repo_dir):
    if not _bridge_available(repo_dir):
        pytest.skip("bridge not built (run `npm install && npm run build` in bridge/)")
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        port = s.getsockname()[1]
    proc = subprocess.Popen(
        ["node", str(repo_dir / "bridge" / "dist" / "index.js"), "--port", str(port)],
        stdout=subprocess.PIPE, stderr=subprocess.PIPE,
    )
    url = f"http://127.0.0.1:{port}"
    try:
        for _ in range(100):
            try:
                mc.health(url, timeout=0.2)
                break
            except mc.TransportError:
                if proc.poll() is not None:
                    raise RuntimeError(proc.stderr.read().decode())
                time.sleep(0.05)
        else:
            raise RuntimeError("bridge did not come up")
        yield url
    finally:
        proc.terminate()
        proc.wait(timeout=5)


def test_bridge_passes_contract_corpus(bridge_url, repo_dir):
    import json

    corpus = json.loads((repo_dir / "contract" / "cases.json").read_text(encoding="utf-8"))
    names = run_corpus(bridge_url, corpus)
    assert len(names) == len(corpus["cases"])


def test_engine_client_consumes_bridge(bridge_url):
    image = contract_image_bytes()
    dims = ImageDims(64, 48)
    detect = mc.infer(bridge_url, mc.InferenceRequest(mc.Task.DETECT, image, dims))
    assert detect.records is not None and len(detect.records) == 4
    assert detect.scores.char_char.shape == (1, 1)
    ocr = mc.infer(bridge_url, mc.InferenceRequest(mc.Task.OCR, image, dims))
    assert ocr.tokens[-1] == "</s>"
    ground = mc.infer(bridge_url,
                      mc.InferenceRequest(mc.Task.GROUND, image, dims, caption="a boy waves"))
    assert "<grnd>" in ground.tokens

    descriptor = mc.health(bridge_url)
    assert descriptor["association_scores"] is False
