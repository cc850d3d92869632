import json

import numpy as np
import pytest

from facelf import io
from facelf.config import PipelineConfig
from facelf.pipeline import MissingArtifactError, chain, run_pipeline, seeds

SMALL = {"rig.spatial_res": [48, 48], "synth.n_test": 4}


@pytest.fixture(scope="module")
def oracle_run(tmp_path_factory):
    cfg = PipelineConfig().with_overrides(SMALL)
    run = tmp_path_factory.mktemp("oracle_run")
    return cfg, run, run_pipeline(cfg, run)


def files(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_chain_definitions():
    assert chain("oracle") == ("synth", "epi", "fuse", "eval")
    assert chain("network") == ("synth", "train", "infer", "fuse", "eval")


def test_oracle_smoke_run_writes_report(oracle_run):
    cfg, run, man = oracle_run
    assert man["stages"] == list(chain("oracle"))
    assert man["config_hash"] == cfg.config_hash()
    assert man["seeds"] == seeds(cfg)
    assert {"numpy", "scipy", "numba", "facelf"} <= set(man["versions"])
    report = json.loads((run / "eval" / "report.json").read_text())
    assert len(report["items"]) == 4
    for item in report["items"].values():
        assert item["rmse"] < 5.0 and item["nme"] is not None and item["depth_range_mm"] > 0
    assert report["pooled"]["n"] > 0
    for stage, paths in man["artifacts"].items():
        assert all((run / p).exists() for p in paths), stage


def test_artifacts_are_self_describing(oracle_run):
    _, run, _ = oracle_run
    pair = next((run / "depth").iterdir())
    meta = json.loads((pair / io.DEPTH_PAIR_META).read_text())
    assert meta["kind"] == "depth-pair" and meta["landmarks"] is not None
    surf = next((run / "surface").glob("*.json"))
    assert json.loads(surf.read_text())["kind"] == "surface-grid"


def test_rerun_gives_identical_artifacts(oracle_run, tmp_path):
    cfg, run, _ = oracle_run
    run_pipeline(cfg, tmp_path)
    a, b = files(run), files(tmp_path)
    assert a.keys() == b.keys()
    assert [k for k in a if a[k] != b[k]] == []


def test_rerunning_a_stage_in_place_is_stable(oracle_run):
    cfg, run, _ = oracle_run
    before = files(run)
    man = run_pipeline(cfg, run, ["eval"])
    assert files(run) == before
    assert man["stages"] == list(chain("oracle"))


def test_eval_without_fuse_fails(tmp_path):
    cfg = PipelineConfig().with_overrides({"rig.spatial_res": [32, 32], "synth.n_test": 1})
    run_pipeline(cfg, tmp_path, ["synth"])
    with pytest.raises(MissingArtifactError, match="surfaces"):
        run_pipeline(cfg, tmp_path, ["eval"])
    with pytest.raises(MissingArtifactError, match="depth"):
        run_pipeline(cfg, tmp_path, ["fuse"])


def test_stage_without_synth_fails(tmp_path):
    with pytest.raises(MissingArtifactError, match="synth manifest"):
        run_pipeline(PipelineConfig(), tmp_path, ["epi"])


def test_stage_order_enforced(tmp_path):
    cfg = PipelineConfig()
    with pytest.raises(ValueError):
        run_pipeline(cfg, tmp_path, ["fuse", "synth"])
    with pytest.raises(ValueError):
        run_pipeline(cfg, tmp_path, ["train"])


def test_network_chain_end_to_end(tmp_path):
    cfg = PipelineConfig().with_overrides({
        "rig.spatial_res": [32, 32], "synth.n_train": 1, "synth.n_test": 1,
        "model.estimator": "network", "model.fc_hidden": 16, "model.rows_per_lf": 8,
        "train.iterations": 2, "train.batch_size": 4})
    man = run_pipeline(cfg, tmp_path)
    assert man["stages"] == list(chain("network"))
    assert (tmp_path / "models" / "h.flfw").exists() and (tmp_path / "models" / "v.flfw").exists()
    entries = io.read_manifest(tmp_path / "synth" / "manifest.json")
    assert sorted(e["split"] for e in entries) == ["test", "train"]
    report = json.loads((tmp_path / "eval" / "report.json").read_text())
    assert list(report["items"]) == [e["name"] for e in entries if e["split"] == "test"]
    assert np.isfinite(report["mean_rmse_mm"])
