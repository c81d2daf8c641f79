from __future__ import annotations

import hashlib
import json
import time
from pathlib import Path

import pytest

from mangapipe.cli import main
from mangapipe.dataset_io import RunManifest


def sha_tree(root: Path) -> dict[str, str]:
    return {
        str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(root.rglob("*")) if p.is_file()
    }


class TestDecode:
    def test_detect_stream(self, tmp_path, capsys):
        tokens = tmp_path / "tokens.txt"
        tokens.write_text("<loc_10> <loc_20> <loc_500> <loc_700> <panel> </s>")
        assert main(["decode", "detect", "--tokens-file", str(tokens)]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc == [{"kind": "panel", "box": [10, 20, 500, 700], "order": 0}]

    def test_parse_error_exit_code(self, tmp_path, capsys):
        tokens = tmp_path / "tokens.txt"
        tokens.write_text("<loc_10> <char> </s>")
        assert main(["decode", "detect", "--tokens-file", str(tokens)]) == 1
        assert "token 1" in capsys.readouterr().err

    def test_pregrounded(self, tmp_path, capsys):
        f = tmp_path / "caption.txt"
        f.write_text("A ( tall man ) [ 3 ] waves.")
        assert main(["decode", "pregrounded", "--tokens-file", str(f)]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["phrases"] == [{"phrase": "tall man", "id": 3}]


class TestEval:
    def test_detection_self_eval_is_perfect(self, fixtures_dir, tmp_path, capsys):
        rc = main(["eval", "detection",
                   "--pred", str(fixtures_dir / "annotations" / "pages_pred.json"),
                   "--gt", str(fixtures_dir / "annotations" / "pages_gt.json"),
                   "--out", str(tmp_path / "det"), "--json"])
        assert rc == 0
        report = json.loads(capsys.readouterr().out)
        for kind in ("Characters", "Texts", "Panels", "Tails"):
            assert report["metrics"][kind]["F1"] == 1.0
        assert (tmp_path / "det.json").is_file()
        assert (tmp_path / "det.csv").is_file()
        assert (tmp_path / "det.png").is_file()

    def test_clustering_self_eval(self, fixtures_dir, tmp_path, capsys):
        rc = main(["eval", "clustering",
                   "--pred", str(fixtures_dir / "annotations" / "pages_pred.json"),
                   "--gt", str(fixtures_dir / "annotations" / "pages_gt.json"),
                   "--out", str(tmp_path / "ami"), "--json", "--no-figures"])
        assert rc == 0
        report = json.loads(capsys.readouterr().out)
        assert report["metrics"]["AMI"] == 1.0
        assert not (tmp_path / "ami.png").exists()

    def test_association_ap_on_fixture_scores(self, fixtures_dir, tmp_path, capsys):
        rc = main(["eval", "association",
                   "--pred", str(fixtures_dir / "annotations" / "pages_pred.json"),
                   "--gt", str(fixtures_dir / "annotations" / "pages_gt.json"),
                   "--out", str(tmp_path / "ap"), "--json"])
        assert rc == 0
        report = json.loads(capsys.readouterr().out)
        assert report["metrics"]["Text-Char AP"] == 1.0
        assert report["metrics"]["Text-Tail AP"] == 1.0

    def test_grounding_cli_matches_direct_call(self, fixtures_dir, tmp_path, capsys):
        rc = main(["eval", "grounding",
                   "--pred", str(fixtures_dir / "annotations" / "captions_pred.json"),
                   "--gt", str(fixtures_dir / "annotations" / "captions_gt.json"),
                   "--out", str(tmp_path / "gr"), "--json"])
        assert rc == 0
        report = json.loads(capsys.readouterr().out)
        assert report["metrics"]["F1 Score"] == 1.0

        from mangapipe.dataset_io import load_caption_annotations
        from mangapipe.metrics import grounding_eval
        pred = load_caption_annotations(fixtures_dir / "annotations" / "captions_pred.json")
        gt = load_caption_annotations(fixtures_dir / "annotations" / "captions_gt.json")
        direct = [grounding_eval(p.to_grounded_caption(), g.to_grounded_caption())
                  for p, g in zip(pred, gt)]
        assert all(r.f1 == 1.0 for r in direct)

    def test_judge_eval_reproduces_row_arithmetic(self, fixtures_dir, tmp_path, capsys):
        rc = main(["eval", "judge",
                   "--pred", str(fixtures_dir / "annotations" / "verdicts.json"),
                   "--out", str(tmp_path / "judge"), "--json"])
        assert rc == 0
        report = json.loads(capsys.readouterr().out)
        assert report["metrics"]["gpt-4"] == pytest.approx(3.63)
        assert report["metrics"]["Avg"] == pytest.approx(3.66, abs=0.005)

    def test_eval_requires_gt_except_judge(self, fixtures_dir, capsys):
        rc = main(["eval", "detection",
                   "--pred", str(fixtures_dir / "annotations" / "pages_pred.json")])
        assert rc == 2

    def test_schema_error_is_usage_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{}")
        rc = main(["eval", "detection", "--pred", str(bad), "--gt", str(bad),
                   "--out", str(tmp_path / "x")])
        assert rc == 2


class TestRun:
    def test_empty_pages_dir(self, tmp_path, mock_url):
        pages = tmp_path / "pages"
        pages.mkdir()
        out = tmp_path / "out"
        rc = main(["run", str(pages), str(out),
                   "--infer-url", mock_url, "--chat-url", mock_url, "--json"])
        assert rc == 0
        manifest = RunManifest.load(out / "manifest.json")
        assert manifest.pages == []

    def test_missing_endpoints_is_usage_error(self, tmp_path, monkeypatch, capsys):
        monkeypatch.delenv("MANGAPIPE_INFER_URL", raising=False)
        monkeypatch.delenv("MANGAPIPE_CHAT_URL", raising=False)
        (tmp_path / "pages").mkdir()
        rc = main(["run", str(tmp_path / "pages"), str(tmp_path / "out")])
        assert rc == 2

    def test_unreachable_endpoint_isolates_page_failures(self, fixtures_dir, tmp_path, capsys):
        rc = main(["run", str(fixtures_dir / "pages"), str(tmp_path / "out"),
                   "--infer-url", "http://127.0.0.1:9", "--chat-url", "http://127.0.0.1:9",
                   "--attempts", "1", "--timeout", "0.2"])
        assert rc == 1
        manifest = RunManifest.load(tmp_path / "out" / "manifest.json")
        assert manifest.pages[0].error

    def test_end_to_end_golden_run(self, fixtures_dir, tmp_path, mock_url):
        out = tmp_path / "run"
        start = time.monotonic()
        rc = main(["run", str(fixtures_dir / "pages"), str(out),
                   "--infer-url", mock_url, "--chat-url", mock_url,
                   "--name-map", str(fixtures_dir / "name_map.json"),
                   "--parallelism", "2", "--json"])
        elapsed = time.monotonic() - start
        assert rc == 0
        assert elapsed < 5.0
        page = out / "pages" / "page_001"
        goldens = fixtures_dir / "goldens"
        for name in ("transcript.json", "prose_prompt.txt", "prose.txt"):
            assert (page / name).read_bytes() == (goldens / name).read_bytes()
        for name in ("captions.json", "grounded.json"):
            assert (page / name).is_file()

        before = sha_tree(out)
        rc = main(["run", str(fixtures_dir / "pages"), str(out),
                   "--infer-url", mock_url, "--chat-url", mock_url,
                   "--name-map", str(fixtures_dir / "name_map.json"),
                   "--parallelism", "2", "--json"])
        assert rc == 0
        assert sha_tree(out) == before

    def test_style_change_invalidates_prose_cache(self, fixtures_dir, tmp_path, mock_url):
        from mangapipe import fixtures as fx

        out = tmp_path / "run"
        base = ["run", str(fixtures_dir / "pages"), str(out),
                "--infer-url", mock_url, "--chat-url", mock_url,
                "--name-map", str(fixtures_dir / "name_map.json"), "--json"]
        assert main(list(base)) == 0
        page = out / "pages" / "page_001"
        assert page.joinpath("prose.txt").read_text(encoding="utf-8") == fx.PROSE_TEXT

        assert main(base + ["--style", "screenplay"]) == 0
        assert page.joinpath("prose.txt").read_text(encoding="utf-8") == fx.SCREENPLAY_TEXT
        assert "should be a screenplay." in page.joinpath("prose_prompt.txt").read_text()
        manifest = RunManifest.load(out / "manifest.json")
        assert manifest.config["style"] == "SCREENPLAY"

    def test_resume_skips_model_calls(self, fixtures_dir, tmp_path, mock_url):
        out = tmp_path / "run"
        rc = main(["run", str(fixtures_dir / "pages"), str(out),
                   "--infer-url", mock_url, "--chat-url", mock_url,
                   "--name-map", str(fixtures_dir / "name_map.json"), "--json"])
        assert rc == 0
        before = sha_tree(out / "pages")
        # rerun against a dead endpoint: cached model outputs must carry the run
        rc = main(["run", str(fixtures_dir / "pages"), str(out),
                   "--infer-url", "http://127.0.0.1:9", "--chat-url", "http://127.0.0.1:9",
                   "--attempts", "1", "--timeout", "0.2",
                   "--name-map", str(fixtures_dir / "name_map.json"), "--json"])
        assert rc == 0
        assert sha_tree(out / "pages") == before


class TestMockServeCommand:
    def test_bad_fixture_dir_is_usage_error(self, tmp_path, capsys):
        rc = main(["mock-serve", str(tmp_path)])
        assert rc == 2
        assert "manifest" in capsys.readouterr().err


class TestFixturesGen:
    def test_idempotent_regeneration(self, tmp_path):
        from mangapipe import fixtures as fx

        dest = tmp_path / "fx"
        fx.generate(dest)
        first = sha_tree(dest)
        fx.generate(dest)
        assert sha_tree(dest) == first

    def test_shipped_fixtures_match_generator(self, fixtures_dir, tmp_path):
        from mangapipe import fixtures as fx

        dest = tmp_path / "fx"
        fx.generate(dest)
        shipped = sha_tree(fixtures_dir)
        fresh = sha_tree(dest)
        missing = set(fresh) - set(shipped)
        assert not missing
        for name, digest in fresh.items():
            assert shipped[name] == digest, f"fixture drift: {name}"
