"""CLI contract: exit codes, JSON summaries, determinism."""

import json

import numpy as np
from PIL import Image

from gapbridge.embio import read_embeddings

from clip_export import cli


def _run(argv, capsys):
    code = cli.run(argv)
    out, err = capsys.readouterr()
    return code, out, err


def _summary(out: str) -> dict:
    lines = out.strip().splitlines()
    assert len(lines) == 1, f"expected one summary line, got {lines!r}"
    return json.loads(lines[0])


def _captions_file(tmp_path, n=4):
    path = tmp_path / "caps.txt"
    path.write_text("".join(f"caption about item {i}\n" for i in range(n)), encoding="utf-8")
    return path


def _image_dir(tmp_path, n=3):
    directory = tmp_path / "imgs"
    directory.mkdir()
    for i in range(n):
        rng = np.random.default_rng(100 + i)
        Image.fromarray(
            rng.integers(0, 256, (20, 20, 3), dtype=np.uint8), "RGB"
        ).save(directory / f"img{i}.png")
    return directory


class TestParsing:
    def test_missing_model_flag_named(self, tmp_path, capsys):
        code, _, err = _run(["text", "--in", "x.txt", "--out", "y.emb"], capsys)
        assert code == 1
        assert "--model" in err and err.startswith("usage error")

    def test_unknown_subcommand(self, capsys):
        code, _, err = _run(["frobnicate"], capsys)
        assert code == 1 and "usage error" in err

    def test_unknown_model_id(self, tmp_path, capsys):
        captions = _captions_file(tmp_path)
        code, _, err = _run(
            ["text", "--model", "vit-l", "--in", str(captions), "--out", str(tmp_path / "o.emb")],
            capsys,
        )
        assert code == 1
        assert "unknown model id" in err

    def test_bad_batch_value(self, tmp_path, capsys):
        captions = _captions_file(tmp_path)
        code, _, err = _run(
            [
                "text", "--model", "lexhash-16", "--in", str(captions),
                "--out", str(tmp_path / "o.emb"), "--batch", "0",
            ],
            capsys,
        )
        assert code == 1 and "batch must be >= 1" in err


class TestTextCommand:
    def test_summary_and_file(self, tmp_path, capsys):
        captions = _captions_file(tmp_path)
        out = tmp_path / "caps.emb"
        code, stdout, _ = _run(
            ["text", "--model", "lexhash-16", "--in", str(captions), "--out", str(out)],
            capsys,
        )
        assert code == 0
        summary = _summary(stdout)
        assert summary["count"] == 4 and summary["dim"] == 16 and summary["normalized"]
        assert read_embeddings(out).count == 4

    def test_no_normalize_flag(self, tmp_path, capsys):
        captions = _captions_file(tmp_path)
        out = tmp_path / "raw.emb"
        code, stdout, _ = _run(
            [
                "text", "--model", "lexhash-16", "--in", str(captions),
                "--out", str(out), "--no-normalize",
            ],
            capsys,
        )
        assert code == 0
        assert not _summary(stdout)["normalized"]
        assert not read_embeddings(out).normalized

    def test_byte_reproducible(self, tmp_path, capsys):
        captions = _captions_file(tmp_path)
        a, b = tmp_path / "a.emb", tmp_path / "b.emb"
        for out in (a, b):
            code, _, _ = _run(
                ["text", "--model", "lexhash-32", "--in", str(captions), "--out", str(out)],
                capsys,
            )
            assert code == 0
        assert a.read_bytes() == b.read_bytes()

    def test_missing_input_file(self, tmp_path, capsys):
        code, _, err = _run(
            ["text", "--model", "lexhash-16", "--in", str(tmp_path / "gone.txt"),
             "--out", str(tmp_path / "o.emb")],
            capsys,
        )
        assert code == 2 and "missing file" in err

    def test_blank_line_is_input_error(self, tmp_path, capsys):
        captions = tmp_path / "caps.txt"
        captions.write_text("ok\n\nok\n", encoding="utf-8")
        code, _, err = _run(
            ["text", "--model", "lexhash-16", "--in", str(captions), "--out", str(tmp_path / "o.emb")],
            capsys,
        )
        assert code == 2 and "line 2 is blank" in err


class TestImageCommand:
    def test_summary_lists_skips(self, tmp_path, capsys):
        directory = _image_dir(tmp_path)
        (directory / "zzz.png").write_text("junk", encoding="utf-8")
        out = tmp_path / "imgs.emb"
        code, stdout, _ = _run(
            ["image", "--model", "lexhash-16", "--in", str(directory), "--out", str(out)],
            capsys,
        )
        assert code == 0
        summary = _summary(stdout)
        assert summary["count"] == 3 and summary["skipped"] == ["zzz.png"]
        assert read_embeddings(out).ids == ("img0.png", "img1.png", "img2.png")

    def test_empty_dir_is_input_error(self, tmp_path, capsys):
        directory = tmp_path / "none"
        directory.mkdir()
        code, _, err = _run(
            ["image", "--model", "lexhash-16", "--in", str(directory), "--out", str(tmp_path / "o.emb")],
            capsys,
        )
        assert code == 2 and "no files in directory" in err


class TestCocoCommand:
    def _annotation_file(self, tmp_path):
        doc = {
            "annotations": [
                {"image_id": 1, "id": k, "caption": f"a photo number {k}"} for k in range(6)
            ]
        }
        path = tmp_path / "ann.json"
        path.write_text(json.dumps(doc), encoding="utf-8")
        return path

    def test_default_lexicon_path(self, tmp_path, capsys):
        ann = self._annotation_file(tmp_path)
        out = tmp_path / "caps.txt"
        code, stdout, _ = _run(["coco", "--in", str(ann), "--out", str(out)], capsys)
        assert code == 0
        summary = _summary(stdout)
        assert summary["captions"] == 6
        lexicon = tmp_path / "caps.lexicon.txt"
        assert str(lexicon) == summary["lexicon_out"]
        assert "motorcycle" in lexicon.read_text(encoding="utf-8").splitlines()

    def test_explicit_lexicon_path(self, tmp_path, capsys):
        ann = self._annotation_file(tmp_path)
        lexicon = tmp_path / "nouns.txt"
        code, stdout, _ = _run(
            ["coco", "--in", str(ann), "--out", str(tmp_path / "c.txt"),
             "--lexicon-out", str(lexicon)],
            capsys,
        )
        assert code == 0 and lexicon.exists()

    def test_malformed_json_is_input_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{oops", encoding="utf-8")
        code, _, err = _run(
            ["coco", "--in", str(bad), "--out", str(tmp_path / "c.txt")], capsys
        )
        assert code == 2 and "not valid JSON" in err
