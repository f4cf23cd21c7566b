import json
import subprocess
import sys

import pytest

from acfleet.bench.io import read_csv, read_jsonl
from acfleet.cli import main

from helpers import SMALL_CONFIG, cli_invocations


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "small.ini"
    cfg.write_text(SMALL_CONFIG)
    assert main(["train", "--config", str(cfg), "--episodes", "2", "--out-dir", str(root / "ck")]) == 0
    return root, cfg, root / "ck" / "ppo-he.acck"


def run(argv, out):
    return main([*argv, "--out-dir", str(out)])


@pytest.mark.filterwarnings("ignore::acfleet.signal.GridTooCoarse")
@pytest.mark.parametrize("name", ["gen-table", "simulate", "train", "evaluate", "scaling", "robustness"])
def test_identical_runs_give_identical_csv(workspace, name):
    root, cfg, ck = workspace
    argv = cli_invocations(cfg, ck)[name]
    a, b = root / f"{name}-a", root / f"{name}-b"
    assert run(argv, a) == 0 and run(argv, b) == 0
    csvs = sorted(p.name for p in a.glob("*.csv"))
    assert csvs
    for fname in csvs:
        assert (a / fname).read_bytes() == (b / fname).read_bytes(), fname


def test_timing_output(workspace):
    root, cfg, ck = workspace
    out = root / "timing"
    assert run(cli_invocations(cfg, ck)["timing"], out) == 0
    version, rows = read_csv(out / "timing.csv")
    assert version == 1
    assert [(r["controller"], r["N"]) for r in rows] == [("bbc", "10"), ("bbc", "40"), ("greedy", "10"),
                                                          ("greedy", "40")]


def test_simulate_outputs(workspace):
    root, cfg, _ = workspace
    out = root / "sim"
    assert run(["simulate", "--config", str(cfg), "--record-stride", "5"], out) == 0
    header, recs = read_jsonl(out / "trajectory.jsonl")
    assert header["kind"] == "trajectory" and len(recs) == 30
    assert {"t", "s", "P", "Th", "on", "lockout"} <= set(recs[0])
    _, rows = read_csv(out / "metrics.csv")
    assert rows[0]["controller"] == "greedy"


def test_evaluate_summary_rows(workspace):
    root, cfg, _ = workspace
    out = root / "eval"
    assert run(["evaluate", "--config", str(cfg), "--controller", "bbc"], out) == 0
    _, rows = read_csv(out / "metrics.csv")
    assert [r["seed"] for r in rows] == ["1", "2", "mean", "std"]


def test_train_writes_log_and_checkpoint(workspace):
    root, cfg, ck = workspace
    assert ck.is_file() and ck.read_bytes()[:4] == b"ACCK"
    lines = (root / "ck" / "train_log.jsonl").read_text().splitlines()
    assert len(lines) == 2 and "mean_reward" in json.loads(lines[0])


def test_missing_config_exit_code(tmp_path):
    assert main(["evaluate", "--config", str(tmp_path / "nope.ini"), "--out-dir", str(tmp_path)]) == 2


def test_bad_config_exit_code(tmp_path):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[environment]\nN = 3\nNc = 7\n")
    assert main(["simulate", "--config", str(cfg), "--out-dir", str(tmp_path)]) == 2


def test_missing_checkpoint_exit_code(tmp_path):
    assert main(["evaluate", "--checkpoint", str(tmp_path / "x.acck"), "--out-dir", str(tmp_path)]) == 2


def test_incompatible_checkpoint_exit_code(workspace, tmp_path):
    _, _, ck = workspace
    cfg = tmp_path / "c.ini"
    cfg.write_text("[environment]\nN = 10\nNc = 4\n[experiment]\nhorizon = 20\nwarmup = 0\n")
    assert main(["evaluate", "--config", str(cfg), "--checkpoint", str(ck), "--out-dir", str(tmp_path)]) == 2


def test_unknown_subcommand_exit_code():
    assert main(["explode"]) == 2


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "acfleet", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.strip()
