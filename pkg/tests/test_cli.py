import json

import pytest

from vitalconv.cli import main
from vitalconv.config import ConfigError, DESK_CONFIG, dump_config, parse_config

TINY_INI = """\
[run]
batch_size = 8
max_steps = 20
eval_every = 10
val_samples = 24
dtype = float64

[approx]
preset = desk
filters = 4
embed = 16
heads = 2

[refine]
preset = desk
hidden = 16
layers = 1
embed = 64
"""


def _run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """synth -> train-apx -> train-ref pretrain/finetune on a tiny cohort."""
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.ini"
    cfg.write_text(TINY_INI)
    data, run = root / "data", root / "run"
    assert _run("synth", "--patients", 10, "--segments-per-patient", 2, "--seed", 1, "--segment-seconds", 4.096,
                "--out", data) == 0
    assert _run("train-apx", "--data", data, "--config", cfg, "--out", run) == 0
    assert _run("train-ref", "--stage", "pretrain", "--data", data, "--config", cfg, "--out", run) == 0
    assert _run("train-ref", "--stage", "finetune", "--data", data, "--config", cfg, "--out", run) == 0
    return {"root": root, "cfg": cfg, "data": data, "run": run}


def test_synth_is_byte_identical(tmp_path):
    for name in ("a", "b"):
        assert _run("synth", "--patients", 8, "--segments-per-patient", 2, "--seed", 1, "--out", tmp_path / name) == 0
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert "manifest.json" in files
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_evaluate_untrained_run_reports_missing_checkpoint(tmp_path, pipeline, capsys):
    (tmp_path / "empty").mkdir()
    code = _run("evaluate", "--data", pipeline["data"], "--run", tmp_path / "empty", "--out", tmp_path / "rep")
    assert code == 1
    assert "checkpoint missing" in capsys.readouterr().err


def test_missing_data_and_bad_usage(tmp_path, capsys, monkeypatch):
    monkeypatch.delenv("VITALCONV_DATA", raising=False)
    assert _run("train-apx", "--out", tmp_path) == 1
    assert "--data" in capsys.readouterr().err
    with pytest.raises(SystemExit) as exc:
        main(["ablate", "--mode", "nope", "--out", str(tmp_path)])
    assert exc.value.code == 2


def test_finetune_without_pretrain_fails(tmp_path, pipeline, capsys):
    code = _run("train-ref", "--stage", "finetune", "--data", pipeline["data"], "--config", pipeline["cfg"],
                "--out", tmp_path / "fresh")
    assert code == 1 and "checkpoint missing" in capsys.readouterr().err


def test_evaluate_all_directions(pipeline, tmp_path, capsys):
    out = tmp_path / "rep"
    assert _run("evaluate", "--data", pipeline["data"], "--run", pipeline["run"], "--out", out) == 0
    doc = json.loads((out / "report.json").read_text())
    assert len(doc["directions"]) == 6
    for name, d in doc["directions"].items():
        if name.endswith("->ABP"):
            assert d["unit"] == "mmHg" and d["aami"]["verdict"] in ("Pass", "Fail") and d["bhs"]["overall"] in "ABCD"
        else:
            assert "aami" not in d and "bhs" not in d
    for f in ("similarity.csv", "features.csv", "standards.csv", "similarity.svg", "bhs.svg"):
        assert (out / f).is_file()
    text = capsys.readouterr().out
    assert "AAMI" in text and "report written" in text
    assert _run("report", out) == 0


def test_evaluate_deterministic(pipeline, tmp_path):
    for name in ("a", "b"):
        assert _run("evaluate", "--data", pipeline["data"], "--run", pipeline["run"], "--out", tmp_path / name) == 0
    for f in sorted(p.name for p in (tmp_path / "a").iterdir()):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), f


def test_evaluate_aggregates_runs(pipeline, tmp_path):
    run2 = tmp_path / "run2"
    assert _run("train-apx", "--data", pipeline["data"], "--config", pipeline["cfg"], "--out", run2, "--seed", 5) == 0
    out = tmp_path / "agg"
    assert _run("evaluate", "--data", pipeline["data"], "--run", pipeline["run"], run2, "--directions", "ECG:PPG,PPG:ECG",
                "--out", out) == 0
    assert (out / "run0" / "report.json").is_file() and (out / "run1" / "report.json").is_file()
    agg = list(out.glob("aggregate*"))
    assert agg


def test_convert_with_refinement(pipeline, tmp_path):
    out = tmp_path / "conv.csv"
    run = pipeline["run"]
    assert _run("convert", "--data", pipeline["data"], "--checkpoint", run / "apx.ckpt", "--source", "PPG",
                "--target", "ABP", "--refine", run / "ref.ckpt", "--out", out) == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith("# PPG->ABP unit=mmHg")
    assert _run("convert", "--data", pipeline["data"], "--checkpoint", run / "apx.ckpt", "--source", "ECG",
                "--target", "ECG", "--out", out) == 1


def test_ablate_modes(pipeline, tmp_path):
    out = tmp_path / "abl"
    assert _run("ablate", "--mode", "wcl-pi", "--data", pipeline["data"], "--config", pipeline["cfg"], "--run",
                pipeline["run"], "--seeds", "0,1,2", "--pretrain-steps", 10, "--finetune-steps", 10, "--out", out) == 0
    grid = json.loads((out / "wcl_pi.json").read_text())
    assert len(grid["rows"]) == 4
    assert (out / "wcl_pi.txt").is_file() and (out / "wcl_pi.svg").is_file()


def test_config_rejects_unknown_keys(tmp_path):
    with pytest.raises(ConfigError, match="unknown"):
        parse_config("[run]\nbatch_sz = 3\n")
    with pytest.raises(ConfigError, match="unknown"):
        parse_config("[model]\nx = 1\n")
    cfg = parse_config(DESK_CONFIG)
    assert parse_config(dump_config(cfg)) == cfg
    bad = tmp_path / "bad.ini"
    bad.write_text("[run]\nlr = fast\n")
    assert _run("train-apx", "--data", tmp_path, "--config", bad, "--out", tmp_path / "o") == 1
