from __future__ import annotations

import csv
import json

import pytest

from tandem.cli import main


@pytest.fixture()
def corpus(tmp_path):
    path = tmp_path / "corpus.jsonl"
    assert main(["gen-corpus", "--count", "12", "--out", str(path), "--seed", "2"]) == 0
    return path


def run(*args) -> int:
    return main([str(a) for a in args])


def test_validate(corpus, tmp_path, capsys):
    assert run("validate", "--corpus", corpus) == 0
    assert capsys.readouterr().out.startswith("12 sessions, 0 failures")
    bad = tmp_path / "bad.jsonl"
    bad.write_text(corpus.read_text() + "{oops\n")
    assert run("validate", "--corpus", bad) == 1
    assert "line 13" in capsys.readouterr().out


def test_schedule_augment_deterministic(corpus, tmp_path):
    sched = tmp_path / "oracles.jsonl"
    assert run("schedule", "--corpus", corpus, "--out", sched, "--seed", "1") == 0
    outs = []
    for name, seed in (("a", 1), ("b", 1), ("c", 2)):
        out = tmp_path / f"{name}.jsonl"
        assert run("augment", "--corpus", corpus, "--oracles", sched, "--out", out, "--seed", seed) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    assert outs[0] != outs[2]
    assert len(outs[0].splitlines()) == 12


def test_augment_rejects_unknown_sessions(corpus, tmp_path):
    sched = tmp_path / "oracles.jsonl"
    sched.write_text(
        json.dumps({"session_id": "ghost", "turn_index": 0, "seq": 1, "emit_time_ms": 0, "level": 5, "ratio": "1/1", "text": "x"})
        + "\n"
    )
    with pytest.raises(SystemExit):
        run("augment", "--corpus", corpus, "--oracles", sched, "--out", tmp_path / "o.jsonl")


@pytest.mark.parametrize("binary", [False, True])
def test_simulate_and_latency(corpus, tmp_path, binary):
    outs = []
    for name, seed in (("a", 5), ("b", 5), ("c", 6)):
        trace = tmp_path / f"{name}.trace"
        args = ["simulate", "--corpus", corpus, "--trace-out", trace, "--seed", seed, "--forced-delay-ms", 500]
        assert run(*args, *(["--binary"] if binary else [])) == 0
        outs.append(trace.read_bytes())
    assert outs[0] == outs[1] and outs[0] != outs[2]
    lat = tmp_path / "lat.csv"
    assert run("latency", "--trace", tmp_path / "a.trace", "--corpus", corpus, "--out", lat) == 0
    rows = list(csv.DictReader(lat.open()))
    assert rows and all(int(r["latency_ms"]) >= 500 - 80 for r in rows)


def test_simulate_backend_source(corpus, tmp_path):
    trace = tmp_path / "t.jsonl"
    assert run("simulate", "--corpus", corpus, "--trace-out", trace, "--source", "backend") == 0
    assert trace.read_text().count('"type":"session"') == 12


def test_sweep_and_plot_data(corpus, tmp_path):
    reports = []
    for name, seed in (("a", 0), ("b", 0), ("c", 9)):
        out = tmp_path / f"{name}.json"
        assert run("sweep", "--corpus", corpus, "--delays", "0,1000", "--out", out, "--judge", "mock", "--seed", seed) == 0
        reports.append(out.read_bytes())
    assert reports[0] == reports[1] and reports[0] != reports[2]
    plot = tmp_path / "plot.csv"
    assert run("plot-data", "--report", tmp_path / "a.json", "--out", plot) == 0
    rows = list(csv.DictReader(plot.open()))
    assert [r["forced_delay_ms"] for r in rows] == ["0", "1000"]


def test_config_file(corpus, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"backend_cycle_ms": 400}))
    slow, fast = tmp_path / "slow.jsonl", tmp_path / "fast.jsonl"
    assert run("schedule", "--corpus", corpus, "--out", slow, "--config", cfg) == 0
    assert run("schedule", "--corpus", corpus, "--out", fast) == 0
    assert len(slow.read_text().splitlines()) < len(fast.read_text().splitlines())


def test_http_requires_endpoint(corpus, tmp_path):
    with pytest.raises(SystemExit):
        run("schedule", "--corpus", corpus, "--out", tmp_path / "o.jsonl", "--simulator", "http")
