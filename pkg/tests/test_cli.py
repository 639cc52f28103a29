import csv
import json
from pathlib import Path

import numpy as np
import pytest

from nprl import verify
from nprl.checkpoint import load_checkpoint
from nprl.cli import build_config, main
from nprl.env import TASK_IDS
from nprl.env.rollout import random_policy_stats
from nprl.model import Head, TrunkConfig, build_model
from nprl.predictivity import load_assembly, read_report_csv

DQN_FLAGS = ["--task", "simpler-basic", "--steps", "80", "--resolution", "32", "--batch-size", "4"]


def run(*argv):
    return main([str(a) for a in argv])


def tree(root: Path) -> dict:
    """Relative path -> bytes, with the output location dropped from the frozen config."""
    out = {}
    for p in sorted(root.rglob("*")):
        if p.is_file():
            data = p.read_bytes()
            if p.name == "effective-config.json":
                doc = json.loads(data)
                doc.pop("out")
                data = json.dumps(doc, sort_keys=True).encode()
            out[str(p.relative_to(root))] = data
    return out


def rerun_identical(tmp_path, first: Path) -> bool:
    second = tmp_path / (first.name + "-again")
    assert run(verify_cmd(first), "--config", first / "effective-config.json", "--out", second) == 0
    return tree(first) == tree(second)


def verify_cmd(out: Path) -> str:
    return json.loads((out / "effective-config.json").read_text())["command"]


def test_unknown_task_exit_2_lists_tasks(tmp_path, capsys):
    assert run("train-dqn", "--task", "doom2", "--out", tmp_path) == 2
    err = capsys.readouterr().err
    assert all(t in err for t in TASK_IDS)


def test_usage_errors_exit_2(tmp_path, capsys):
    assert run("no-such-command") == 2
    assert run("train-dqn", "--task", "simpler-basic") == 2  # no output directory
    bad = tmp_path / "c.json"
    bad.write_text(json.dumps({"dqn": {"learning_rate": 0.1}}))
    assert run("train-dqn", "--config", bad, "--out", tmp_path / "x") == 2
    assert "learning_rate" in capsys.readouterr().err
    bad.write_text("{not json")
    assert run("train-dqn", "--config", bad, "--out", tmp_path / "x") == 2
    assert run("train-dqn", "--config", tmp_path / "missing.json", "--out", tmp_path / "x") == 2
    assert run("train-dqn", *DQN_FLAGS, "--lr", "-1", "--out", tmp_path / "x") == 2
    assert run("score", "--out", tmp_path / "s") == 2


def test_config_precedence(tmp_path):
    cfg_file = tmp_path / "c.json"
    cfg_file.write_text(json.dumps({"seed": 5, "dqn": {"lr": 0.5, "gamma": 0.8}}))
    cfg = build_config("train-dqn", cfg_file, {"dqn.lr": 0.25})
    assert cfg["seed"] == 5 and cfg["dqn"]["gamma"] == 0.8 and cfg["dqn"]["lr"] == 0.25
    assert cfg["dqn"]["batch_size"] == 32  # untouched default


def test_train_dqn_artifacts_and_determinism(tmp_path):
    out = tmp_path / "sb"
    assert run("train-dqn", *DQN_FLAGS, "--seed", "7", "--out", out) == 0
    for name in ("metrics.csv", "model.nprl", "effective-config.json"):
        assert (out / name).is_file()
    assert rerun_identical(tmp_path, out)


def test_train_dqn_zero_steps_is_initialization(tmp_path):
    assert run("train-dqn", *DQN_FLAGS, "--steps", "0", "--seed", "7", "--out", tmp_path) == 0
    fresh = build_model(TrunkConfig(resolution=32), Head.dueling(3), seed=7)
    loaded = load_checkpoint(tmp_path / "model.nprl")
    assert all(np.array_equal(loaded.params[k].data, fresh.params[k].data) for k in fresh.params)


def test_train_sup_quick_profile_resume_and_missing_manifest(tmp_path, capsys):
    out = tmp_path / "q"
    assert run("train-sup", "--profile", "quick", "--out", out) == 0
    rows = list(csv.DictReader(open(out / "curves.csv")))
    assert [int(r["epoch"]) for r in rows] == [1, 2]
    assert rerun_identical(tmp_path, out)
    assert run("train-sup", "--profile", "quick", "--epochs", "1", "--resume", out / "model.nprl", "--out", out) == 0
    rows = list(csv.DictReader(open(out / "curves.csv")))
    assert [int(r["epoch"]) for r in rows] == [1, 2, 3]
    capsys.readouterr()
    assert run("train-sup", "--dataset", tmp_path / "nowhere", "--out", tmp_path / "m") == 2
    assert str(tmp_path / "nowhere" / "manifest.csv") in capsys.readouterr().err


def test_train_sup_from_manifest_directory(tmp_path):
    assert run("synth", "mix", "--per-class", "4", "--objects", "2", "--textures", "2", "--resolution", "32",
               "--out", tmp_path / "data") == 0
    assert (tmp_path / "data" / "manifest.csv").is_file()
    assert run("train-sup", "--dataset", tmp_path / "data", "--resolution", "32", "--epochs", "1",
               "--out", tmp_path / "run") == 0
    assert load_checkpoint(tmp_path / "run" / "model.nprl").head == Head.classifier(4)


def test_synth_assembly_schema_and_determinism(tmp_path):
    out = tmp_path / "v1"
    assert run("synth", "assembly", "--layer", "conv2", "--neurons", "102", "--sigma", "0.5", "--stimuli", "40",
               "--resolution", "32", "--out", out) == 0
    asm, stim = load_assembly(out)
    assert len(asm.neuron_ids) == 102 and len(stim) == 40 and asm.area == "V1"
    truth = json.loads((out / "ground_truth.json").read_text())
    assert truth["ceiling"] == pytest.approx(0.8944271909999159)
    assert rerun_identical(tmp_path, out)


def test_score_untrained_and_trained_rows_and_chart(tmp_path):
    asm_dir = tmp_path / "asm"
    assert run("synth", "assembly", "--stimuli", "50", "--neurons", "6", "--resolution", "32", "--out", asm_dir) == 0
    model = build_model(TrunkConfig(resolution=32), Head.classifier(20), seed=3)
    from nprl.checkpoint import save_checkpoint
    save_checkpoint(model, tmp_path / "m.nprl")
    common = ["--assembly", asm_dir, "--k", "8", "--splits", "5"]
    assert run("score", "--untrained", "0", "--resolution", "32", *common, "--out", tmp_path / "u") == 0
    assert run("score", "--model", tmp_path / "m.nprl", *common, "--out", tmp_path / "t") == 0
    u, t = read_report_csv(tmp_path / "u" / "report.csv"), read_report_csv(tmp_path / "t" / "report.csv")
    assert [r["layer"] for r in u] == [r["layer"] for r in t] == ["conv1", "conv2", "conv3", "conv4", "fc"]
    assert (tmp_path / "u" / "chart_V1.svg").is_file()
    assert rerun_identical(tmp_path, tmp_path / "u")
    assert run("score", "--untrained", "0", "--model", tmp_path / "m.nprl", *common, "--out", tmp_path / "x") == 2


def test_rollout_random_matches_stats_and_records(tmp_path):
    out = tmp_path / "r"
    rec = tmp_path / "rec"
    assert run("rollout", "--task", "defend-center", "--episodes", "4", "--seed", "2", "--record", rec,
               "--out", out) == 0
    rows = list(csv.DictReader(open(out / "episodes.csv")))
    stats = random_policy_stats("defend-center", 4, 2)
    assert len(rows) == 4 and [float(r["return"]) for r in rows] == stats["returns"]
    summary = json.loads((out / "summary.json").read_text())
    assert summary["mean"] == pytest.approx(stats["mean"])
    assert (rec / "log.csv").is_file()
    frames = tree(rec)
    assert rerun_identical(tmp_path, out)
    assert tree(rec) == frames


def test_rollout_with_trained_model(tmp_path):
    assert run("train-dqn", *DQN_FLAGS, "--out", tmp_path / "m") == 0
    assert run("rollout", "--policy", "model", "--model", tmp_path / "m" / "model.nprl", "--resolution", "32",
               "--episodes", "1", "--out", tmp_path / "r") == 0
    assert run("rollout", "--policy", "model", "--model", tmp_path / "m" / "model.nprl", "--resolution", "64",
               "--out", tmp_path / "r2") == 2


def test_verify_reports_corrupted_oracle(tmp_path, monkeypatch, capsys):
    quick = {k: verify.FAST_CHECKS[k] for k in ("pearson", "architecture", "ceiling", "td-semantics")}
    monkeypatch.setattr(verify, "FAST_CHECKS", quick)
    assert run("verify", "--out", tmp_path / "ok") == 0
    oracles = verify.load_oracles()
    oracles["trunk_parameters"] += 1
    bad = tmp_path / "oracles.json"
    bad.write_text(json.dumps(oracles))
    capsys.readouterr()
    assert run("verify", "--oracles", bad) == 1
    captured = capsys.readouterr()
    assert "FAIL  architecture" in captured.out and "architecture" in captured.err


def test_convert_commands(tmp_path):
    rng = np.random.default_rng(0)
    src = tmp_path / "cifar"
    src.mkdir()
    recs = [np.concatenate([[i % 10], rng.integers(0, 256, 3072)]).astype(np.uint8) for i in range(6)]
    np.concatenate(recs).tofile(src / "data_batch_1.bin")
    np.concatenate(recs[:2]).tofile(src / "test_batch.bin")
    assert run("convert-cifar", "--src", src, "--limit", "4", "--out", tmp_path / "c") == 0
    lines = (tmp_path / "c" / "manifest.csv").read_text().splitlines()
    assert len(lines) == 1 + 4 + 2
    assert run("convert-cifar", "--src", tmp_path / "empty", "--out", tmp_path / "c2") == 2

    assert run("synth", "assembly", "--stimuli", "10", "--neurons", "3", "--resolution", "32",
               "--out", tmp_path / "a") == 0
    assert run("convert-assembly", "--responses", tmp_path / "a" / "responses.csv", "--stimuli", tmp_path / "a",
               "--area", "IT", "--out", tmp_path / "b") == 0
    a, _ = load_assembly(tmp_path / "a")
    b, _ = load_assembly(tmp_path / "b")
    assert b.area == "IT" and np.array_equal(a.responses, b.responses)
    assert (tmp_path / "a" / "responses.csv").read_bytes() == (tmp_path / "b" / "responses.csv").read_bytes()


def test_module_entry_point_help():
    import subprocess
    import sys
    res = subprocess.run([sys.executable, "-m", "nprl", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "train-dqn" in res.stdout
