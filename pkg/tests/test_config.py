import json

import pytest

from facelf.config import ConfigError, PipelineConfig


def test_defaults_validate():
    cfg = PipelineConfig().validate()
    assert cfg.rig.build().focal_px == pytest.approx(307.2 / 2)


@pytest.mark.parametrize("key,value,field", [
    ("rig.spatial_res", [16, 64], "rig.spatial_res"),
    ("rig.angular_res", [14, 15], "rig.angular_res"),
    ("rig.focus_depth", -1.0, "rig"),
    ("synth.n_test", 0, "synth.n_test"),
    ("synth.poses", "sideways", "synth.poses"),
    ("synth.difficulty", "cube", "synth.difficulty"),
    ("model.estimator", "magic", "model.estimator"),
    ("model.dtype", "float16", "model.dtype"),
    ("metrics.crop_factor", 0.0, "metrics.crop_factor"),
    ("search.coarse_steps", 3, "search"),
    ("train.base_lr", -1.0, "train"),
    ("gridfit.smoothness", -1.0, "gridfit"),
])
def test_field_level_errors(key, value, field):
    with pytest.raises(ConfigError) as exc:
        PipelineConfig().with_overrides({key: value})
    assert exc.value.field == field
    assert field in str(exc.value)


def test_network_needs_training_scenes():
    with pytest.raises(ConfigError) as exc:
        PipelineConfig().with_overrides({"model.estimator": "network"})
    assert exc.value.field == "synth.n_train"


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError) as exc:
        PipelineConfig.from_dict({"colour": 1})
    assert exc.value.field == "colour"
    with pytest.raises(ConfigError) as exc:
        PipelineConfig.from_dict({"rig": {"zoom": 2}})
    assert exc.value.field == "rig.zoom"
    with pytest.raises(ConfigError):
        PipelineConfig().with_overrides({"rig.zoom": 2})
    with pytest.raises(ConfigError):
        PipelineConfig().with_overrides({"nothing.here": 2})
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict([1, 2])


def test_dict_round_trip_preserves_hash():
    cfg = PipelineConfig().with_overrides({"seed": 7, "rig.spatial_res": [48, 40]})
    back = PipelineConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert back == cfg and back.config_hash() == cfg.config_hash()
    assert back.rig.spatial_res == (48, 40)


def test_hash_tracks_semantic_fields_only():
    base = PipelineConfig()
    h = base.config_hash()
    assert len(h) == 16 and PipelineConfig().config_hash() == h
    assert base.with_overrides({"train.log_every": 50}).config_hash() == h
    for key, value in (("seed", 1), ("rig.focus_depth", 601.0), ("gridfit.smoothness", 2e-3),
                       ("search.refine", False), ("metrics.icp", True), ("synth.n_test", 5)):
        assert base.with_overrides({key: value}).config_hash() != h, key


def test_none_overrides_are_skipped():
    assert PipelineConfig().with_overrides({"seed": None}) == PipelineConfig()


def test_load(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"seed": 3, "synth": {"n_test": 2}}))
    cfg = PipelineConfig.load(p)
    assert cfg.seed == 3 and cfg.synth.n_test == 2
    p.write_text("{oops")
    with pytest.raises(ConfigError):
        PipelineConfig.load(p)
