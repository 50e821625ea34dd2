"""Config schema: strict keys, derived defaults, and round-tripping."""

import dataclasses

import pytest

from splatforge.config import (
    DEFAULT_K_VALUES,
    PipelineConfig,
    config_from_dict,
    load_config,
    save_config,
)
from splatforge.errors import ConfigError


def test_defaults():
    cfg = PipelineConfig()
    assert cfg.seed == 1234
    assert cfg.face_size == 128
    assert cfg.keyframe_threshold == 0.35
    assert cfg.map_voxel == 0.05
    assert cfg.opacity == 0.1
    assert cfg.prism.k_values == DEFAULT_K_VALUES
    assert cfg.prism.bins_per_channel == 8
    assert cfg.icp.weight_scheme == "tukey"
    assert cfg.registration.init_from_trajectory is False
    assert cfg.paths.out_dir == "run"


def test_derived_distances_follow_map_voxel():
    cfg = PipelineConfig(map_voxel=0.2)
    assert cfg.icp_max_corr_dist() == pytest.approx(1.0)
    assert cfg.global_max_corr_dist() == pytest.approx(3.0)
    assert cfg.effective_dedup_radius() == pytest.approx(0.2)


def test_explicit_values_override_derivation():
    cfg = config_from_dict(
        {
            "map_voxel": 0.2,
            "dedup_radius": 0.01,
            "icp": {"max_corr_dist": 0.07},
            "global_reg": {"max_corr_dist": 0.9},
        }
    )
    assert cfg.icp_max_corr_dist() == 0.07
    assert cfg.global_max_corr_dist() == 0.9
    assert cfg.effective_dedup_radius() == 0.01


def test_config_is_frozen():
    cfg = PipelineConfig()
    with pytest.raises(dataclasses.FrozenInstanceError):
        cfg.seed = 5
    with pytest.raises(dataclasses.FrozenInstanceError):
        cfg.prism.bins_per_channel = 4


def test_unknown_top_level_key_rejected():
    with pytest.raises(ConfigError, match="face_sze"):
        config_from_dict({"face_sze": 128})


def test_unknown_section_key_rejected():
    with pytest.raises(ConfigError, match="unknown icp keys"):
        config_from_dict({"icp": {"max_iters": 10}})


def test_section_must_be_object():
    with pytest.raises(ConfigError, match="must be an object"):
        config_from_dict({"icp": 3})


def test_config_must_be_object():
    with pytest.raises(ConfigError, match="must be an object"):
        config_from_dict([1, 2])


@pytest.mark.parametrize(
    "raw",
    [
        {"face_size": 4},
        {"keyframe_threshold": 0.0},
        {"keyframe_threshold": 1.5},
        {"map_voxel": 0.0},
        {"opacity": 0.0},
        {"opacity": 1.0},
        {"prism": {"k_values": []}},
        {"prism": {"k_values": [5, 0]}},
    ],
)
def test_invalid_values_rejected(raw):
    with pytest.raises(ConfigError):
        config_from_dict(raw)


def test_k_values_coerced_to_int_tuple():
    cfg = config_from_dict({"prism": {"k_values": [10, 2]}})
    assert cfg.prism.k_values == (10, 2)


def test_save_load_round_trip(tmp_path):
    cfg = config_from_dict(
        {
            "seed": 99,
            "map_voxel": 0.08,
            "features": {"max_features": 250},
            "registration": {"init_from_trajectory": True, "scale": 2.5},
            "prism": {"k_values": [1, 7], "bins_per_channel": 4},
        }
    )
    path = tmp_path / "cfg.json"
    save_config(cfg, str(path))
    loaded = load_config(str(path))
    assert loaded == cfg
    assert loaded.config_hash() == cfg.config_hash()


def test_load_config_missing_file():
    with pytest.raises(ConfigError, match="no such config file"):
        load_config("/definitely/not/here.json")


def test_load_config_invalid_json(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(str(path))


def test_config_hash_tracks_content():
    base = PipelineConfig()
    same = PipelineConfig()
    changed = dataclasses.replace(base, seed=4321)
    assert base.config_hash() == same.config_hash()
    assert base.config_hash() != changed.config_hash()
    assert len(base.config_hash()) == 16
