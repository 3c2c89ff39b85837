import json
import subprocess
import sys

import pytest

from hakka_asr import cli

SUBCOMMANDS = ["stats", "featurize", "train-am", "decode", "train-lm", "rescore", "score", "toy-data", "demo-e2e"]


def run(*argv):
    return cli.main(list(argv))


@pytest.mark.parametrize("sub", SUBCOMMANDS)
def test_help(sub, capsys):
    with pytest.raises(SystemExit) as exit_:
        cli.build_parser().parse_args([sub, "--help"])
    assert exit_.value.code == 0
    assert "usage: hakka-asr " + sub in capsys.readouterr().out


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "hakka_asr", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.startswith("hakka-asr ")


def test_stats_fixture(tmp_path, capsys):
    out = tmp_path / "t1.tsv"
    assert run("stats", "--table1-fixture", "--out", str(out)) == 0
    text = capsys.readouterr().out
    for value in ("10.39", "10.02", "1.38", "9.61", "86.54", "43,652", "7.14"):
        assert value in text
    assert out.read_text().splitlines()[-1] == "Total\t86.54\t43652\t7.14"
    assert (tmp_path / "t1.png").stat().st_size > 0


@pytest.mark.parametrize("argv, code", [
    (["stats"], cli.EXIT_USAGE),
    (["stats", "--manifest", "/nonexistent.jsonl"], cli.EXIT_PATH),
    (["score", "--ref", "/nonexistent", "--hyp", "/nonexistent"], cli.EXIT_PATH),
    (["train-lm", "--corpus", "x"], cli.EXIT_USAGE),
    (["stats", "--bogus"], cli.EXIT_USAGE),
])
def test_exit_codes(argv, code, capsys):
    if code == cli.EXIT_USAGE and "--bogus" in argv:
        with pytest.raises(SystemExit) as exit_:
            run(*argv)
        assert exit_.value.code == code
    else:
        assert run(*argv) == code
    err = capsys.readouterr().err
    assert f'"code": {code}' in err


def test_bad_manifest_is_data_error(tmp_path, capsys):
    (tmp_path / "m.jsonl").write_text('{"utt_id": "a", "source": "s", "duration_s": 0}\n')
    assert run("stats", "--manifest", str(tmp_path / "m.jsonl")) == cli.EXIT_DATA
    assert "line 1" in capsys.readouterr().err


def test_bad_config(tmp_path):
    (tmp_path / "c.json").write_text("{not json")
    assert run("--config", str(tmp_path / "c.json"), "stats", "--table1-fixture") == cli.EXIT_CONFIG
    (tmp_path / "c.json").write_text(json.dumps({"stats": {"colour": 1}}))
    assert run("--config", str(tmp_path / "c.json"), "stats", "--table1-fixture") == cli.EXIT_CONFIG


def test_shared_config_keys_apply_where_known(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"seed": 3, "train-am": {"epochs": 2}}))
    assert run("--config", str(cfg), "stats", "--table1-fixture") == 0
    cfg.write_text(json.dumps({"sede": 3}))
    assert run("--config", str(cfg), "stats", "--table1-fixture") == cli.EXIT_CONFIG
    assert "sede" in capsys.readouterr().err


def test_config_precedence(tmp_path):
    corpus = tmp_path / "lm.txt"
    corpus.write_text("客家人\n客家話\n")
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"train-lm": {"out": str(tmp_path / "from_cfg.arpa"), "order": 3}}))
    assert run("--config", str(cfg), "train-lm", "--corpus", str(corpus)) == 0
    assert "ngram 3=" in (tmp_path / "from_cfg.arpa").read_text()
    assert run("--config", str(cfg), "train-lm", "--corpus", str(corpus), "--order", "2") == 0
    assert "ngram 3=" not in (tmp_path / "from_cfg.arpa").read_text()


def test_logs_are_structured(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("HAKKA_ASR_LOG_LEVEL", "info")
    assert run("stats", "--table1-fixture") == 0
    lines = [json.loads(x) for x in capsys.readouterr().err.splitlines() if x.startswith("{")]
    assert any(r.get("config_hash") and r.get("msg") == "run" for r in lines)


@pytest.fixture(scope="module")
def demo_runs(tmp_path_factory):
    dirs = []
    for name in ("a", "b"):
        d = tmp_path_factory.mktemp("demo" + name)
        assert cli.main(["demo-e2e", "--workdir", str(d), "--num-utts", "8", "--epochs", "3"]) == 0
        dirs.append(d)
    return dirs


def test_demo_produces_reports(demo_runs):
    d = demo_runs[0]
    for name in ("score_char.tsv", "score_char.png", "score_pinyin.tsv", "am/loss.tsv", "am/loss.png",
                 "error_report.png", "hyp_char.txt"):
        assert (d / name).stat().st_size > 0
    header, row = (d / "score_char.tsv").read_text().splitlines()
    assert header.split("\t")[:4] == ["track", "read", "spont", "average"]
    assert row.startswith("character\t")


def test_demo_reruns_are_byte_identical(demo_runs):
    a, b = demo_runs
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    assert len(files) > 30
    for rel in files:
        assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel


def test_jobs_merge_in_order(demo_runs, tmp_path):
    d = demo_runs[0]
    for jobs in ("1", "3"):
        assert run("featurize", "--manifest", str(d / "manifest.jsonl"), "--stub-ssl", "--jobs", jobs,
                   "--out-dir", str(tmp_path / jobs)) == 0
        assert run("rescore", "--lattice-dir", str(d / "lattices"), "--lm", str(d / "lm.arpa"), "--expand",
                   "--jobs", jobs, "--out", str(tmp_path / f"hyp{jobs}.txt")) == 0
    assert (tmp_path / "1" / "feats.scp").read_bytes() == (tmp_path / "3" / "feats.scp").read_bytes()
    assert (tmp_path / "hyp1.txt").read_bytes() == (tmp_path / "hyp3.txt").read_bytes()
    for f in (tmp_path / "1").glob("*.feat"):
        assert f.read_bytes() == (tmp_path / "3" / f.name).read_bytes()
