import json
import subprocess
import sys

import pytest

from chainact.cli import config_hash, load_config, main

TINY = {
    "seed": 7,
    "training": {"train_seeds": 3, "epochs": 2, "spaces": ["motion", "grounding", "latent"], "hidden": 32},
    "vq": {"epochs": 5, "codebook_size": 16},
    "eval": {"tasks": ["chop_oak", "craft_planks", "kill_sheep"], "max_steps": 40, "mini_set": ["chop_oak"]},
}


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "cfg.json"
    cfg.write_text(json.dumps({**TINY, "output_dir": str(root / "out")}))
    c = ["--config", str(cfg)]
    steps = [
        ["gen-experts", *c],
        ["train-vq", *c],
        ["label", *c],
        ["build-datasets", *c],
        ["train", "--agent", "flat", *c],
        ["train", "--agent", "ha", "--space", "motion", *c],
        ["train", "--agent", "ha", "--space", "latent", *c],
        ["train", "--agent", "coa", "--space", "grounding", "--stage", "1", *c],
        ["train", "--agent", "coa", "--space", "grounding", "--stage", "2", *c],
        ["eval", "--agent", "flat", "--mode", "slow", *c],
        ["eval", "--agent", "ha", "--space", "motion", "--mode", "fast", *c],
        ["eval", "--agent", "ha", "--space", "latent", "--mode", "fast", *c],
        ["eval", "--agent", "coa", "--space", "grounding", "--mode", "slow", *c],
        ["eval", "--agent", "expert", *c],
        ["report", *c],
    ]
    for argv in steps:
        assert main(argv) == 0, argv
    return root, cfg, root / "out" / "v1"


def test_pipeline_artifacts(run):
    _, _, out = run
    for rel in ("experts.jsonl", "vq.jsonl", "labels/motion.jsonl", "labels/grounding.jsonl", "report.md",
                "report.csv"):
        assert (out / rel).exists(), rel
    assert len(list((out / "results").glob("*.jsonl"))) == 5
    header = json.loads((out / "experts.jsonl").read_text().splitlines()[0])
    assert {"artifact", "config_hash", "tool_version", "format"} <= set(header)


def test_config_hash_ignores_output_dir(run):
    _, cfg, _ = run
    a = load_config(str(cfg))
    assert config_hash(a) == config_hash(a.__class__(**{**a.__dict__, "output_dir": "/elsewhere"}))


def test_report_is_pure(run, capsys):
    _, cfg, out = run
    md, csv_text = (out / "report.md").read_text(), (out / "report.csv").read_text()
    assert main(["report", "--config", str(cfg)]) == 0
    assert (out / "report.md").read_text() == md and (out / "report.csv").read_text() == csv_text
    lines = md.strip().splitlines()
    assert len(lines) == 2 + 5
    assert "8.0" in next(l for l in lines if "MotionHA" in l).split("|")[-2]


def test_stage_two_needs_stage_one(run, tmp_path, capsys):
    _, cfg, _ = run
    assert main(["train", "--agent", "coa", "--space", "motion", "--stage", "2", "--config", str(cfg)]) == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "ConfigError" and err["exit_code"] == 2
    assert main(["train", "--agent", "flat", "--stage", "1", "--config", str(cfg)]) == 2


def test_unknown_config_key(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"bogus": 1}))
    assert main(["roundtrip-test", "--config", str(bad)]) == 2
    bad.write_text(json.dumps({"training": {"epocs": 3}}))
    assert main(["roundtrip-test", "--config", str(bad)]) == 2


def test_missing_output_parent(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"output_dir": str(tmp_path / "no" / "such" / "dir")}))
    assert main(["roundtrip-test", "--config", str(cfg)]) == 2


def test_mixed_hash_refused_without_force(run, tmp_path):
    _, cfg, out = run
    src = sorted((out / "results").glob("*.jsonl"))[0]
    lines = src.read_text().splitlines()
    head = json.loads(lines[0])
    head["config_hash"] = "0" * 16
    other = tmp_path / "other.jsonl"
    other.write_text("\n".join([json.dumps(head, sort_keys=True)] + lines[1:]) + "\n")
    argv = ["report", str(src), str(other), "--out", str(tmp_path / "rep"), "--config", str(cfg)]
    assert main(argv) == 2
    assert main(argv + ["--force"]) == 0


def test_roundtrip_command(capsys):
    assert main(["roundtrip-test", "--n-text", "500", "--n-grammar", "100"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert len(out) == 8 and all(l.startswith("PASS") for l in out)


def test_seed_override_changes_hash(run, monkeypatch):
    _, cfg, _ = run
    base = config_hash(load_config(str(cfg)))
    assert config_hash(load_config(str(cfg), 8)) != base
    monkeypatch.setenv("MINEGRID_SEED", "9")
    assert load_config(str(cfg)).seed == 9


def test_console_script_runs():
    r = subprocess.run([sys.executable, "-m", "chainact.cli", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.strip()
