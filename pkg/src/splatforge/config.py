"""Pipeline configuration: a strict, hashable JSON schema.

Unknown keys are rejected so typos cannot silently fall back to defaults.
Values left null derive at runtime (ICP correspondence distances from the
map voxel, FPFH radius from point spacing); the derived values land in the
stage ledgers' params so every run records what it actually used.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields

from splatforge.errors import ConfigError
from splatforge.ledger import canonical_json, hash_bytes

DEFAULT_K_VALUES = (1, 5, 10, 20, 30, 50, 100)


def _from_mapping(cls, raw: dict, context: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"{context} must be an object, got {type(raw).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown {context} keys: {sorted(unknown)}")
    return cls(**raw)


@dataclass(frozen=True)
class FeatureConfig:
    max_features: int = 1000
    fast_threshold: float = 20.0
    match_ratio: float = 0.8
    ransac_iterations: int = 2000
    inlier_px: float = 3.0


@dataclass(frozen=True)
class IcpConfig:
    max_corr_dist: float | None = None  # None: 5 x map_voxel
    max_iterations: int = 50
    rel_fitness_eps: float = 1e-6
    rel_rmse_eps: float = 1e-6
    weight_scheme: str = "tukey"


@dataclass(frozen=True)
class GlobalRegConfig:
    max_corr_dist: float | None = None  # None: 15 x map_voxel
    iterations: int = 4000
    edge_similarity: float = 0.9


@dataclass(frozen=True)
class RegistrationConfig:
    normal_knn: int = 30
    fpfh_radius: float | None = None  # None: 5 x mean NN spacing
    alignment_fitness_gate: float = 0.5
    scale: float | None = None  # None: estimate robustly
    init_from_trajectory: bool = False


@dataclass(frozen=True)
class PrismSection:
    bins_per_channel: int = 8
    k_values: tuple = DEFAULT_K_VALUES

    def __post_init__(self):
        object.__setattr__(self, "k_values", tuple(int(k) for k in self.k_values))
        if not self.k_values or any(k < 1 for k in self.k_values):
            raise ConfigError(f"k_values must be positive, got {self.k_values}")


@dataclass(frozen=True)
class PathsConfig:
    erp_dir: str = "erp"
    lidar_dir: str = "lidar"
    sfm_dir: str = "sfm"
    calibration: str = "calibration.json"
    out_dir: str = "run"


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 1234
    face_size: int = 128
    keyframe_threshold: float = 0.35
    temporal_tolerance_s: float = 0.05
    map_voxel: float = 0.05
    odometry_fitness_floor: float = 0.3
    min_track: int = 3
    dedup_radius: float | None = None  # None: map_voxel
    opacity: float = 0.1
    features: FeatureConfig = field(default_factory=FeatureConfig)
    icp: IcpConfig = field(default_factory=IcpConfig)
    global_reg: GlobalRegConfig = field(default_factory=GlobalRegConfig)
    registration: RegistrationConfig = field(default_factory=RegistrationConfig)
    prism: PrismSection = field(default_factory=PrismSection)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def __post_init__(self):
        if self.face_size < 8:
            raise ConfigError(f"face_size must be >= 8, got {self.face_size}")
        if not 0.0 < self.keyframe_threshold <= 1.0:
            raise ConfigError("keyframe_threshold must be in (0, 1]")
        if self.map_voxel <= 0:
            raise ConfigError("map_voxel must be positive")
        if not 0.0 < self.opacity < 1.0:
            raise ConfigError("opacity must be in (0, 1)")

    # Derived defaults -------------------------------------------------
    def icp_max_corr_dist(self) -> float:
        return (
            self.icp.max_corr_dist
            if self.icp.max_corr_dist is not None
            else 5.0 * self.map_voxel
        )

    def global_max_corr_dist(self) -> float:
        return (
            self.global_reg.max_corr_dist
            if self.global_reg.max_corr_dist is not None
            else 15.0 * self.map_voxel
        )

    def effective_dedup_radius(self) -> float:
        return self.dedup_radius if self.dedup_radius is not None else self.map_voxel

    def to_dict(self) -> dict:
        def unpack(obj):
            if hasattr(obj, "__dataclass_fields__"):
                return {f.name: unpack(getattr(obj, f.name)) for f in fields(obj)}
            if isinstance(obj, tuple):
                return list(obj)
            return obj

        return unpack(self)

    def config_hash(self) -> str:
        return hash_bytes(canonical_json(self.to_dict()))


def config_from_dict(raw: dict) -> PipelineConfig:
    if not isinstance(raw, dict):
        raise ConfigError(f"config must be an object, got {type(raw).__name__}")
    sections = {
        "features": FeatureConfig,
        "icp": IcpConfig,
        "global_reg": GlobalRegConfig,
        "registration": RegistrationConfig,
        "prism": PrismSection,
        "paths": PathsConfig,
    }
    known = {f.name for f in fields(PipelineConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kwargs = {}
    for key, value in raw.items():
        if key in sections:
            kwargs[key] = _from_mapping(sections[key], value, key)
        else:
            kwargs[key] = value
    try:
        return PipelineConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path: str) -> PipelineConfig:
    if not os.path.isfile(path):
        raise ConfigError(f"no such config file: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    return config_from_dict(raw)


def save_config(config: PipelineConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
