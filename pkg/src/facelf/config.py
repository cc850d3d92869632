"""Pipeline configuration: nested dataclasses, validation and a stable hash."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .fusion import GridFitSpec
from .lightfield import CameraRig
from .net.train import TrainConfig
from .oracle import SlopeSearchSpec
from .synth import DIFFICULTIES


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending dotted path."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class RigConfig:
    spatial_res: tuple = (64, 64)
    angular_res: tuple = (15, 15)
    focal_px: float | None = None
    baseline: float | None = None
    focus_depth: float = 600.0

    def build(self) -> CameraRig:
        over = {"focus_depth": self.focus_depth}
        if self.focal_px is not None:
            over["focal_px"] = self.focal_px
        if self.baseline is not None:
            over["baseline"] = self.baseline
        return CameraRig.for_resolution(tuple(self.spatial_res), **over)


@dataclass(frozen=True)
class SynthConfig:
    n_train: int = 0
    n_test: int = 4
    poses: str = "frontal"
    difficulty: str = "face-like"
    vary_lighting: bool = True


@dataclass(frozen=True)
class ModelConfig:
    estimator: str = "oracle"
    rows_per_lf: int | None = None
    fc_hidden: int = 4096
    dtype: str = "float32"


@dataclass(frozen=True)
class MetricConfig:
    icp: bool = False
    crop_factor: float = 1.4
    heatmaps: bool = False


@dataclass(frozen=True)
class PipelineConfig:
    rig: RigConfig = field(default_factory=RigConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    search: SlopeSearchSpec = field(default_factory=SlopeSearchSpec)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    gridfit: GridFitSpec = field(default_factory=GridFitSpec)
    metrics: MetricConfig = field(default_factory=MetricConfig)
    seed: int = 0

    def validate(self) -> "PipelineConfig":
        r, s, m = self.rig, self.synth, self.model
        if len(r.spatial_res) != 2 or min(r.spatial_res) < 32:
            raise ConfigError("rig.spatial_res", "needs two extents, each >= 32")
        if len(r.angular_res) != 2 or any(a < 3 or a % 2 == 0 for a in r.angular_res):
            raise ConfigError("rig.angular_res", "needs two odd extents >= 3")
        try:
            r.build()
        except ValueError as exc:
            raise ConfigError("rig", str(exc)) from exc
        if s.n_train < 0 or s.n_test < 1:
            raise ConfigError("synth.n_test", "need n_train >= 0 and n_test >= 1")
        if s.poses not in ("standard", "frontal"):
            raise ConfigError("synth.poses", f"must be 'standard' or 'frontal', got {s.poses!r}")
        if s.difficulty not in DIFFICULTIES:
            raise ConfigError("synth.difficulty", f"must be one of {DIFFICULTIES}")
        if m.estimator not in ("oracle", "network"):
            raise ConfigError("model.estimator", "must be 'oracle' or 'network'")
        if m.estimator == "network" and s.n_train < 1:
            raise ConfigError("synth.n_train", "the network estimator needs training scenes")
        if m.dtype not in ("float32", "float64"):
            raise ConfigError("model.dtype", "must be float32 or float64")
        if not self.metrics.crop_factor > 0:
            raise ConfigError("metrics.crop_factor", "must be positive")
        return self

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    def config_hash(self) -> str:
        """SHA-256 over semantic fields; logging knobs are left out."""
        d = self.to_dict()
        d["train"].pop("log_every", None)
        blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        if not isinstance(d, dict):
            raise ConfigError("<root>", "configuration must be a JSON object")
        kw = {}
        for f in dataclasses.fields(cls):
            if f.name not in d:
                continue
            v = d[f.name]
            sub = f.default_factory if f.default_factory is not dataclasses.MISSING else None
            kw[f.name] = _build(sub().__class__, v, f.name) if sub is not None else v
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown configuration key")
        try:
            cfg = cls(**kw)
        except (TypeError, ValueError) as exc:
            raise ConfigError("<root>", str(exc)) from exc
        return cfg.validate()

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        try:
            d = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError("<file>", f"{path}: {exc}") from exc
        return cls.from_dict(d)

    def with_overrides(self, overrides: dict) -> "PipelineConfig":
        """Apply ``{"section.key": value}`` overrides; ``None`` values are skipped."""
        d = self.to_dict()
        for key, v in overrides.items():
            if v is None:
                continue
            parts = key.split(".")
            node = d
            for p in parts[:-1]:
                if p not in node or not isinstance(node[p], dict):
                    raise ConfigError(key, "unknown configuration section")
                node = node[p]
            if parts[-1] not in node:
                raise ConfigError(key, "unknown configuration key")
            node[parts[-1]] = v
        return PipelineConfig.from_dict(d)


def _build(klass, value, path):
    if not isinstance(value, dict):
        raise ConfigError(path, "expected an object")
    names = {f.name for f in dataclasses.fields(klass)}
    unknown = set(value) - names
    if unknown:
        raise ConfigError(f"{path}.{sorted(unknown)[0]}", "unknown configuration key")
    kw = {k: tuple(v) if isinstance(v, list) else v for k, v in value.items()}
    try:
        return klass(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(path, str(exc)) from exc


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj
