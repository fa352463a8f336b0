"""Declarative experiment configuration.

One JSON file describes a whole experiment: scene and trajectory generation,
camera, train/test split, training hyper-parameters, exactly one supervision
degradation, and the fusion/mesh settings. Two presets ship with the
package: ``desk-scale`` (CPU-sized defaults) and ``paper-scale``. A config
file overrides preset values key by key.

All randomness flows from the single top-level seed; per-module generators
are derived by labelled splitting.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

import numpy as np

from semfield.errors import ConfigError
from semfield.field import EncodingConfig, FieldConfig
from semfield.fusion import SimulatedCnnSpec, TAU_DEPTH
from semfield.synthgen import SceneSpec, TrajectorySpec
from semfield.train import TrainConfig

DEGRADE_KINDS = ("none", "sparsity", "pixel_noise", "region_noise",
                 "downscale", "partial", "fusion_sim")


def rng_for(seed: int, label: str) -> np.random.Generator:
    """Deterministic per-module generator derived from the experiment seed."""
    return np.random.default_rng([seed, zlib.crc32(label.encode())])


@dataclass
class CameraSpec:
    width: int = 64
    height: int = 48
    hfov_deg: float = 90.0


@dataclass
class DegradeSpec:
    kind: str = "none"
    # sparsity
    sparsity_ratio: float = 0.0
    keyframes: list | None = None
    # pixel noise
    noise_ratio: float = 0.5
    # region noise
    region_ratio: float = 0.3
    region_criterion: str = "sort"
    target_class: int | None = None
    # downscale
    scale: int = 8
    downscale_mode: str = "sparse_void"
    # partial
    budget: str | float = "single_click"

    def __post_init__(self):
        if self.kind not in DEGRADE_KINDS:
            raise ConfigError(f"unknown degradation kind {self.kind!r}")


@dataclass
class MeshSpec:
    resolution: int = 64
    iso: float = 5.0


@dataclass
class FieldSpec:
    trunk_width: int = 64
    trunk_depth: int = 4
    skip_at: int = 2
    head_width: int = 32
    l_pos: int = 10
    l_dir: int = 4
    density_activation: str = "softplus"

    def to_field_config(self, num_classes: int) -> FieldConfig:
        return FieldConfig(
            num_classes=num_classes,
            encoding=EncodingConfig(l_pos=self.l_pos, l_dir=self.l_dir),
            trunk_width=self.trunk_width, trunk_depth=self.trunk_depth,
            skip_at=self.skip_at, head_width=self.head_width,
            density_activation=self.density_activation)


@dataclass
class ExperimentConfig:
    seed: int = 0
    scene: SceneSpec = field(default_factory=lambda: SceneSpec(
        num_primitives=8, num_classes=7))
    trajectory: TrajectorySpec = field(default_factory=lambda: TrajectorySpec(
        num_poses=200))
    camera: CameraSpec = field(default_factory=CameraSpec)
    split_stride: int = 5
    gt_t_far: float = 20.0
    train: TrainConfig = field(default_factory=TrainConfig)
    field_spec: FieldSpec = field(default_factory=FieldSpec)
    degrade: DegradeSpec = field(default_factory=DegradeSpec)
    fusion: SimulatedCnnSpec = field(default_factory=SimulatedCnnSpec)
    fusion_tau_d: float = TAU_DEPTH
    mesh: MeshSpec = field(default_factory=MeshSpec)

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "ExperimentConfig":
        return _build(ExperimentConfig, d)


def _build(cls, d: dict):
    if not isinstance(d, dict):
        raise ConfigError(f"expected a mapping for {cls.__name__}, got {type(d).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = set(d) - set(known)
    if unknown:
        raise ConfigError(f"unknown keys for {cls.__name__}: {sorted(unknown)}")
    kwargs = {}
    for name, value in d.items():
        target = _nested_type(cls, name)
        if target is not None and value is not None:
            kwargs[name] = _build(target, value)
        else:
            kwargs[name] = value
    return cls(**kwargs)


_NESTED = {
    "scene": SceneSpec, "trajectory": TrajectorySpec, "camera": CameraSpec,
    "train": TrainConfig, "field_spec": FieldSpec, "degrade": DegradeSpec,
    "fusion": SimulatedCnnSpec, "mesh": MeshSpec,
}


def _nested_type(cls, name):
    if cls is ExperimentConfig:
        return _NESTED.get(name)
    return None


def _deep_update(base: dict, override: dict) -> dict:
    out = dict(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_update(out[k], v)
        else:
            out[k] = v
    return out


def preset(name: str) -> dict:
    path = Path(__file__).parent / "presets" / f"{name}.json"
    if not path.exists():
        available = sorted(p.stem for p in (Path(__file__).parent / "presets").glob("*.json"))
        raise ConfigError(f"unknown preset {name!r}; available: {available}")
    with open(path) as f:
        return json.load(f)


def load_config(path=None, preset_name: str = "desk-scale",
                seed: int | None = None) -> ExperimentConfig:
    base = preset(preset_name)
    if path is not None:
        try:
            with open(path) as f:
                override = json.load(f)
        except FileNotFoundError as e:
            raise ConfigError(f"config file not found: {path}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"malformed config {path}: {e}") from e
        base = _deep_update(base, override)
    cfg = ExperimentConfig.from_dict(base)
    if seed is not None:
        cfg.seed = seed
        cfg.train.seed = seed
    return cfg


def save_config(cfg: ExperimentConfig, path) -> None:
    with open(path, "w") as f:
        json.dump(cfg.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
