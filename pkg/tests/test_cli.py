import json
import subprocess
import sys

import numpy as np
import pytest

from facelf import cli, io


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "syn"
    assert cli.main(["synth", "--scenes", "1", "--train-scenes", "1", "--res", "32,32",
                     "--out", str(out)]) == 0
    return out


def item(synth_dir, split):
    return next(e for e in io.read_manifest(synth_dir / "manifest.json") if e["split"] == split)


@pytest.mark.parametrize("argv", [
    [],
    ["--bogus"],
    ["synth"],
    ["synth", "--out", "x", "--res", "32"],
    ["synth", "--out", "x", "--poses", "sideways"],
    ["fuse", "--h", "a"],
])
def test_usage_errors_exit_1(argv, capsys):
    assert cli.main(argv) == 1
    assert "error" in capsys.readouterr().err


def test_epi_requires_oracle_flag(synth_dir, tmp_path, capsys):
    lf = synth_dir / item(synth_dir, "test")["lf"]
    assert cli.main(["epi", "--in", str(lf), "--out", str(tmp_path / "d")]) == 1
    assert "--oracle" in capsys.readouterr().err


def test_missing_input_file_exit_1(tmp_path, capsys):
    assert cli.main(["epi", "--oracle", "--in", str(tmp_path / "nope"), "--out", str(tmp_path)]) == 1
    assert cli.main(["infer", "--lf", str(tmp_path / "nope"), "--hmodel", "a", "--vmodel", "b",
                     "--out", str(tmp_path)]) == 1


def test_malformed_input_exit_1(tmp_path):
    bad = tmp_path / "bad.pfm"
    bad.write_bytes(b"P9\n1 1\n-1\n")
    meta = tmp_path / "m.json"
    meta.write_text("{}")
    assert cli.main(["fuse", "--h", "a", "--v", "b", "--meta", str(meta), "--out", "c"]) == 1
    assert cli.main(["fuse", "--h", str(bad), "--v", str(bad), "--meta", str(meta),
                     "--out", str(tmp_path / "s.ply")]) == 1


def test_bad_config_exit_1(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"synth": {"n_test": 0}}))
    assert cli.main(["synth", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    assert "synth.n_test" in capsys.readouterr().err


def test_pipeline_missing_artifacts_exit_1(tmp_path, capsys):
    assert cli.main(["pipeline", "--stages", "fuse,eval", "--out", str(tmp_path)]) == 1
    assert "missing" in capsys.readouterr().err


def test_internal_error_exit_2(monkeypatch, tmp_path, capsys):
    import facelf.pipeline

    def boom(*a, **k):
        raise RuntimeError("kaput")

    monkeypatch.setattr(facelf.pipeline, "run_pipeline", boom)
    assert cli.main(["pipeline", "--out", str(tmp_path)]) == 2
    assert "internal error" in capsys.readouterr().err


def test_oracle_chain(synth_dir, tmp_path, capsys):
    e = item(synth_dir, "test")
    lf, gt = synth_dir / e["lf"], synth_dir / e["gt"]
    pair = tmp_path / "pair"
    assert cli.main(["epi", "--oracle", "--in", str(lf), "--out", str(pair)]) == 0
    ply = tmp_path / "s.ply"
    assert cli.main(["fuse", "--h", str(pair / "depth_h.pfm"), "--v", str(pair / "depth_v.pfm"),
                     "--meta", str(pair / "pair.json"), "--landmarks", str(gt / "gt.json"),
                     "--out", str(ply)]) == 0
    rep, heat = tmp_path / "r.json", tmp_path / "e.png"
    capsys.readouterr()
    assert cli.main(["eval", "--pred", str(ply), "--gt", str(gt / "depth.pfm"),
                     "--meta", str(lf / "meta.json"), "--mask", str(gt / "mask.png"),
                     "--landmarks", str(gt / "gt.json"), "--report", str(rep),
                     "--heatmap", str(heat)]) == 0
    printed = json.loads(capsys.readouterr().out)
    assert printed == json.loads(rep.read_text())
    assert 0 < printed["rmse"] < 10.0 and heat.exists()


def test_train_and_infer(synth_dir, tmp_path):
    man = synth_dir / "manifest.json"
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"model": {"fc_hidden": 16, "rows_per_lf": 4}}))
    models = {}
    for o in ("h", "v"):
        models[o] = tmp_path / f"{o}.flfw"
        assert cli.main(["train", "--config", str(cfg), "--manifest", str(man), "--orientation", o,
                         "--split", "train", "--iters", "2", "--batch", "2", "--width", "32",
                         "--out", str(models[o])]) == 0
    assert cli.main(["train", "--config", str(cfg), "--manifest", str(man), "--orientation", "h",
                     "--iters", "1", "--width", "48", "--out", str(tmp_path / "x.flfw")]) == 1
    lf = synth_dir / item(synth_dir, "test")["lf"]
    out = tmp_path / "pair"
    assert cli.main(["infer", "--lf", str(lf), "--hmodel", str(models["h"]),
                     "--vmodel", str(models["v"]), "--out", str(out)]) == 0
    dm_h, dm_v, _, meta = io.read_depth_pair(out)
    assert meta["estimator"] == "network"
    assert dm_h.shape == dm_v.shape == (32, 32) and np.all(dm_h.valid)


def test_pipeline_command(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"rig": {"spatial_res": [32, 32]}}))
    assert cli.main(["pipeline", "--config", str(cfg), "--scenes", "1", "--out", str(tmp_path / "r")]) == 0
    out = capsys.readouterr().out
    assert "config" in out and "synth,epi,fuse,eval" in out
    assert (tmp_path / "r" / "eval" / "report.json").exists()


def test_console_help():
    r = subprocess.run([sys.executable, "-m", "facelf.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    for cmd in ("synth", "epi", "train", "infer", "fuse", "eval", "pipeline"):
        assert cmd in r.stdout
