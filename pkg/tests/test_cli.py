import json
import os

import pytest

from conftest import CONFIGS
from peercensus import cli


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_simulate_twice_gives_identical_bytes(tmp_path):
    for d in ("a", "b"):
        assert run("simulate", "--config", CONFIGS / "baseline.yaml", "--seed", 7, "--duration", 600_000,
                   "--out", tmp_path / d) == 0
    for name in ("metrics.csv", "summary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    header = (tmp_path / "a" / "metrics.csv").read_text().splitlines()[0]
    assert header == "tick,phi_R,phi_I,phi_B,secure,chain_length,committed_ops"
    summary = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert summary["seed"] == 7 and summary["duration"] == 600_000


def test_simulate_to_stdout(capsys):
    assert run("simulate", "--config", CONFIGS / "baseline.yaml", "--duration", 60_000) == 0
    assert json.loads(capsys.readouterr().out)["samples"] == 100


def test_bad_config_exits_nonzero_without_output(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("scenario:\n  attacker_resource_fraction: 2\n")
    out = tmp_path / "out"
    assert run("simulate", "--config", bad, "--out", out) == cli.EXIT_CONFIG
    assert "config error" in capsys.readouterr().err
    assert not out.exists()
    assert run("simulate", "--config", tmp_path / "missing.yaml") == cli.EXIT_CONFIG
    bad.write_text("scenario: [1, 2\n")
    assert run("simulate", "--config", bad) == cli.EXIT_CONFIG
    assert run("simulate") == cli.EXIT_CONFIG
    bad.write_text("bounds:\n  n_resources: 10\n")
    assert run("analyze", "--config", bad) == cli.EXIT_CONFIG


def test_atomic_write_leaves_no_partial_file(tmp_path, monkeypatch):
    target = tmp_path / "x.json"
    target.write_text("old")

    def boom(src, dst):
        raise OSError("disk full")

    monkeypatch.setattr(os, "replace", boom)
    with pytest.raises(OSError):
        cli.write_atomic(target, "new")
    assert target.read_text() == "old"
    assert sorted(p.name for p in tmp_path.iterdir()) == ["x.json"]


def test_io_failure_maps_to_io_exit(tmp_path, monkeypatch):
    monkeypatch.setattr(os, "replace", lambda s, d: (_ for _ in ()).throw(OSError("disk full")))
    assert run("simulate", "--config", CONFIGS / "baseline.yaml", "--duration", 6000, "--out", tmp_path) == cli.EXIT_IO
    assert list(tmp_path.iterdir()) == []


def test_analyze_golden_writes_report(tmp_path, capsys):
    assert run("analyze", "--config", CONFIGS / "golden.yaml", "--out", tmp_path) == 0
    rep = json.loads((tmp_path / "bound_report.json").read_text())
    assert set(rep["terms"]) == {"resource_churn", "miners_luck", "membership_churn"}
    assert rep["secure"] == 1 - rep["total"]
    text = (tmp_path / "bound_report.txt").read_text()
    assert "secure probability per step" in text and text in capsys.readouterr().out


def test_analyze_split_reading_override(tmp_path):
    totals = {}
    for reading in ("direct", "halved", "inflation"):
        out = tmp_path / reading
        assert run("analyze", "--config", CONFIGS / "golden.yaml", "--split-reading", reading, "--out", out) == 0
        rep = json.loads((out / "bound_report.json").read_text())
        assert rep["params"]["split_reading"] == reading
        totals[reading] = rep["total"]
    assert totals["direct"] < totals["halved"] < totals["inflation"]


def test_bootstrap_command(tmp_path):
    assert run("bootstrap", "--config", CONFIGS / "bootstrap.yaml", "--out", tmp_path) == 0
    rec = json.loads((tmp_path / "initial_state.json").read_text())
    assert rec["voter_count"] == 94 and rec["online_count"] == 10
    assert rec["recommit_heights"] == list(range(95, 101))


def test_bootstrap_command_rejects_dead_window(tmp_path):
    cfg = tmp_path / "b.yaml"
    cfg.write_text("bootstrap:\n  l_m: 100\n  k: 6\n  j: 10\n  offline_heights: [85, 86, 87, 88]\n")
    assert run("bootstrap", "--config", cfg, "--out", tmp_path / "o") == cli.EXIT_CONFIG
    assert not (tmp_path / "o").exists()


def test_bootstrap_from_chain_fixture(tmp_path):
    import random

    from peercensus.blockchain import dump_chain
    from peercensus.simnet.scripted import synthetic_chain

    chain, _ = synthetic_chain(30, random.Random(4))
    with open(tmp_path / "chain.jsonl", "w") as fp:
        dump_chain(chain, fp)
    cfg = tmp_path / "b.yaml"
    cfg.write_text("bootstrap:\n  chain: chain.jsonl\n  l_m: 30\n  k: 3\n  j: 6\n")
    assert run("bootstrap", "--config", cfg, "--out", tmp_path / "o") == 0
    rec = json.loads((tmp_path / "o" / "initial_state.json").read_text())
    assert rec["voter_count"] == 27 and rec["online"] == [p.hex() for p in chain.peers()[21:27]]
    cfg.write_text("bootstrap:\n  chain: nope.jsonl\n  l_m: 30\n  k: 3\n  j: 6\n")
    assert run("bootstrap", "--config", cfg) == cli.EXIT_IO


def test_report_merges_run_directories(tmp_path):
    dirs = []
    for s in range(3):
        d = tmp_path / f"run{s}"
        assert run("simulate", "--config", CONFIGS / "baseline.yaml", "--seed", s, "--duration", 60_000, "--out", d) == 0
        dirs.append(d)
    out = tmp_path / "rep"
    assert run("report", *dirs, "--out", out) == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["runs"] == 3 and [r["seed"] for r in rep["per_run"]] == [0, 1, 2]
    lines = (out / "mean_trace.csv").read_text().splitlines()
    assert lines[0] == "tick,mean_phi_R,mean_phi_I,mean_phi_B,secure_fraction,runs"
    assert len(lines) == 101


def test_report_batch_of_quarter_attacker_has_no_violations(tmp_path):
    out = tmp_path / "rep"
    assert run("report", "--config", CONFIGS / "baseline.yaml", "--seeds", 100, "--jobs", 4,
               "--duration", 1_200_000, "--out", out) == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["runs"] == 100
    assert rep["runs_with_violation"] == 0


def test_report_batch_is_independent_of_worker_count(tmp_path):
    texts = []
    for jobs in (1, 3):
        out = tmp_path / f"j{jobs}"
        assert run("report", "--config", CONFIGS / "baseline.yaml", "--seeds", 6, "--jobs", jobs,
                   "--duration", 60_000, "--out", out) == 0
        texts.append(((out / "report.json").read_bytes(), (out / "mean_trace.csv").read_bytes()))
    assert texts[0] == texts[1]


def test_report_needs_inputs(tmp_path):
    assert run("report") == cli.EXIT_CONFIG
    assert run("report", tmp_path / "nothing") == cli.EXIT_IO
