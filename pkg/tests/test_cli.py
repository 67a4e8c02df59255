import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from sqlsentinel.cli import main

CONFIG_TOML = """
[encoder]
dimension = 64
seed = 4

[train]
seed = 4
"""


@pytest.fixture()
def runner():
    return CliRunner()


def _write_raw_corpus(path: Path):
    rows = [
        {"query": "SELECT * FROM employees WHERE depid = 5", "user": "hr", "seq": 0},
        {"query": "select * from employees where depid = ?", "user": "hr", "seq": 1},
        {"query": "select name from employees where id = 7", "user": "dba", "seq": 2},
    ]
    path.write_text("".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8")


def test_normalize_command(runner, tmp_path):
    raw = tmp_path / "raw.jsonl"
    out = tmp_path / "norm.jsonl"
    _write_raw_corpus(raw)
    result = runner.invoke(main, ["normalize", "--in", str(raw), "--out", str(out)])
    assert result.exit_code == 0, result.output
    assert "read 3 queries, kept 2" in result.output
    lines = out.read_text().strip().splitlines()
    assert len(lines) == 2
    first = json.loads(lines[0])
    assert first["normalized"] == "select * from employees where depid = ?"
    assert (tmp_path / "norm.manifest.json").exists()


def test_normalize_reports_malformed_line(runner, tmp_path):
    raw = tmp_path / "raw.jsonl"
    raw.write_text('{"query": "select 1 from t", "seq": 0}\n{oops\n', encoding="utf-8")
    result = runner.invoke(main, ["normalize", "--in", str(raw),
                                  "--out", str(tmp_path / "out.jsonl")])
    assert result.exit_code != 0
    assert "line 2" in result.output


def test_normalize_reports_unterminated_literal_line(runner, tmp_path):
    raw = tmp_path / "raw.jsonl"
    raw.write_text(
        '{"query": "select 1 from t", "seq": 0}\n'
        '\n'
        '{"query": "select \'broken from t", "seq": 1}\n',
        encoding="utf-8")
    result = runner.invoke(main, ["normalize", "--in", str(raw),
                                  "--out", str(tmp_path / "out.jsonl")])
    assert result.exit_code != 0
    assert "line 3" in result.output


def test_gen_learn_detect_eval_flow(runner, tmp_path):
    learn_corpus = tmp_path / "learn.jsonl"
    detect_corpus = tmp_path / "detect.jsonl"
    bundle_dir = tmp_path / "bundle"
    out_dir = tmp_path / "reports"
    config = tmp_path / "config.toml"
    config.write_text(CONFIG_TOML, encoding="utf-8")

    result = runner.invoke(main, [
        "gen", "--out-learn", str(learn_corpus), "--out-detect", str(detect_corpus),
        "--seed", "4", "--normal-per-role", "40", "--heldout-per-role", "8",
        "--attacks", "9", "--masquerade", "hr:finance:8",
    ])
    assert result.exit_code == 0, result.output
    assert "wrote 120 learning and 41 detection records" in result.output

    result = runner.invoke(main, [
        "learn", "--in", str(learn_corpus), "--bundle-dir", str(bundle_dir),
        "--config", str(config),
    ])
    assert result.exit_code == 0, result.output
    for name in ("encoder.json", "ensemble.json", "classifier.json", "thresholds.json",
                 "probability_matrix.csv", "manifest.json"):
        assert (bundle_dir / name).exists(), name

    result = runner.invoke(main, [
        "detect", "--in", str(detect_corpus), "--bundle-dir", str(bundle_dir),
        "--out", str(out_dir),
    ])
    assert result.exit_code == 0, result.output
    assert (out_dir / "verdicts.jsonl").exists()
    assert (out_dir / "scores.csv").exists()
    assert (out_dir / "score_histogram.csv").exists()
    verdicts = [json.loads(line) for line in
                (out_dir / "verdicts.jsonl").read_text().strip().splitlines()]
    assert len(verdicts) == 41
    assert all("tier1" in v for v in verdicts)

    metrics = tmp_path / "metrics.csv"
    # evaluation corpus: learning normals + the labeled masquerades
    eval_corpus = tmp_path / "eval.jsonl"
    rows = learn_corpus.read_text().strip().splitlines()
    rows += [line for line in detect_corpus.read_text().strip().splitlines()
             if "masquerade" in line]
    eval_corpus.write_text("\n".join(rows) + "\n", encoding="utf-8")
    result = runner.invoke(main, [
        "eval", "--in", str(eval_corpus), "--out", str(metrics),
        "--config", str(config), "--repeats", "2",
    ])
    assert result.exit_code == 0, result.output
    lines = metrics.read_text().strip().splitlines()
    assert lines[0] == "run,precision,recall,f1,tp,fp,fn,tn"
    assert len(lines) == 4  # 2 runs + mean


def test_detect_requires_bundle(runner, tmp_path):
    corpus = tmp_path / "c.jsonl"
    _write_raw_corpus(corpus)
    result = runner.invoke(main, [
        "detect", "--in", str(corpus), "--bundle-dir", str(tmp_path), "--out",
        str(tmp_path / "out"),
    ])
    assert result.exit_code != 0
    assert "missing bundle file" in result.output


def test_learn_detect_byte_reproducible(runner, tmp_path):
    learn_corpus = tmp_path / "learn.jsonl"
    detect_corpus = tmp_path / "detect.jsonl"
    config = tmp_path / "config.toml"
    config.write_text(CONFIG_TOML, encoding="utf-8")
    gen_args = [
        "gen", "--out-learn", str(learn_corpus), "--out-detect", str(detect_corpus),
        "--seed", "4", "--normal-per-role", "30", "--heldout-per-role", "5",
        "--attacks", "6",
    ]
    runner.invoke(main, gen_args)
    first = (learn_corpus.read_bytes(), detect_corpus.read_bytes())
    runner.invoke(main, gen_args)
    assert (learn_corpus.read_bytes(), detect_corpus.read_bytes()) == first

    outputs = {}
    for tag in ("a", "b"):
        bundle_dir = tmp_path / f"bundle_{tag}"
        out_dir = tmp_path / f"out_{tag}"
        r1 = runner.invoke(main, ["learn", "--in", str(learn_corpus),
                                  "--bundle-dir", str(bundle_dir), "--config", str(config)])
        assert r1.exit_code == 0, r1.output
        r2 = runner.invoke(main, ["detect", "--in", str(detect_corpus),
                                  "--bundle-dir", str(bundle_dir), "--out", str(out_dir)])
        assert r2.exit_code == 0, r2.output
        outputs[tag] = {
            "bundle": {p.name: p.read_bytes()
                       for p in sorted(bundle_dir.iterdir()) if p.name != "manifest.json"},
            "verdicts": (out_dir / "verdicts.jsonl").read_bytes(),
            "scores": (out_dir / "scores.csv").read_bytes(),
        }
    assert outputs["a"]["bundle"] == outputs["b"]["bundle"]
    assert outputs["a"]["verdicts"] == outputs["b"]["verdicts"]
    assert outputs["a"]["scores"] == outputs["b"]["scores"]


def test_version_flag(runner):
    result = runner.invoke(main, ["--version"])
    assert result.exit_code == 0
    assert "sqlsentinel" in result.output
