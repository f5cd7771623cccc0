"""Experiment configuration: TOML file -> validated, frozen dataclasses."""
from __future__ import annotations

import dataclasses
import os
import sys
from dataclasses import dataclass, field

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..errors import ConfigError, InvalidConfig
from ..geometry import CameraRig
from ..losses import LossConfig
from ..motion import MODES
from ..scene_sim import NoiseModel

METHODS = ("per_frame", "motion_only", "kalman", "learned", "empirical_best")
STEREO_SOURCES = ("noisy_oracle", "block_match")


@dataclass(frozen=True)
class SceneSection:
    width: int = 160
    height: int = 120
    fx: float = 100.0
    fy: float = 100.0
    baseline: float = 0.5
    num_frames: int = 30
    num_objects: int = 2
    num_sequences: int = 10
    camera_speed: float = 0.05
    object_speed: float = 0.06
    static: bool = False

    def rig(self) -> CameraRig:
        return CameraRig(self.fx, self.fy, (self.width - 1) / 2.0, (self.height - 1) / 2.0, self.baseline,
                         self.width, self.height)


@dataclass(frozen=True)
class NoiseSection:
    sigma: float = 0.5
    outlier_rate: float = 0.01
    outlier_magnitude: float = 8.0
    edge_bias: float = 0.0

    def model(self, seed: int) -> NoiseModel:
        return NoiseModel(self.sigma, self.outlier_rate, self.outlier_magnitude, self.edge_bias, seed)


@dataclass(frozen=True)
class StereoSection:
    source: str = "noisy_oracle"
    max_disparity: int = 64


@dataclass(frozen=True)
class MotionSection:
    mode: str = "per_object_rigid"
    K: int = 16


@dataclass(frozen=True)
class FusionSection:
    methods: tuple = METHODS
    process_noise: float = 0.25
    model_path: str = ""


@dataclass(frozen=True)
class TrainSection:
    num_sequences: int = 8
    frames_per_sequence: int = 12
    sequence_length: int = 2
    epochs: int = 12
    batch_size: int = 4096
    learning_rate: float = 1e-2
    pixels_per_frame: int = 4000


@dataclass(frozen=True)
class OutputSection:
    save_maps: bool = True


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    out_dir: str = "runs/default"
    scene: SceneSection = field(default_factory=SceneSection)
    noise: NoiseSection = field(default_factory=NoiseSection)
    stereo: StereoSection = field(default_factory=StereoSection)
    motion: MotionSection = field(default_factory=MotionSection)
    fusion: FusionSection = field(default_factory=FusionSection)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainSection = field(default_factory=TrainSection)
    output: OutputSection = field(default_factory=OutputSection)
    source: str = "<defaults>"

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["fusion"]["methods"] = list(self.fusion.methods)
        return out

    def replace(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **kw)


_SECTIONS = {f.name: f.default_factory for f in dataclasses.fields(ExperimentConfig)
             if f.default_factory is not dataclasses.MISSING}
_TOP = {"seed": int, "out_dir": str}


def _coerce(value, default, where: str):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise InvalidConfig(f"{where}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise InvalidConfig(f"{where}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise InvalidConfig(f"{where}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise InvalidConfig(f"{where}: expected a string, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
            raise InvalidConfig(f"{where}: expected a list of strings, got {value!r}")
        return tuple(value)
    raise InvalidConfig(f"{where}: unsupported value {value!r}")


def _build_section(name: str, raw, path: str):
    if not isinstance(raw, dict):
        raise InvalidConfig(f"{path}: [{name}] must be a table")
    default = _SECTIONS[name]()
    known = {f.name for f in dataclasses.fields(default)}
    kwargs = {}
    for key, value in raw.items():
        if key not in known:
            raise InvalidConfig(f"{path}: unknown key '{name}.{key}' (known: {', '.join(sorted(known))})")
        kwargs[key] = _coerce(value, getattr(default, key), f"{path}: {name}.{key}")
    try:
        return dataclasses.replace(default, **kwargs)
    except ConfigError as exc:
        raise InvalidConfig(f"{path}: [{name}] {exc}") from exc


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    where = cfg.source

    def bad(field_name, msg):
        raise InvalidConfig(f"{where}: {field_name}: {msg}")

    if not 1 <= cfg.motion.K <= 16:
        bad("motion.K", f"must be in 1..16, got {cfg.motion.K}")
    if cfg.motion.mode not in MODES:
        bad("motion.mode", f"must be one of {MODES}, got {cfg.motion.mode!r}")
    if cfg.stereo.source not in STEREO_SOURCES:
        bad("stereo.source", f"must be one of {STEREO_SOURCES}, got {cfg.stereo.source!r}")
    if not 2 <= cfg.stereo.max_disparity <= 210:
        bad("stereo.max_disparity", f"must be in [2, 210], got {cfg.stereo.max_disparity}")
    if not cfg.fusion.methods:
        bad("fusion.methods", "at least one method is required")
    for m in cfg.fusion.methods:
        if m not in METHODS:
            bad("fusion.methods", f"unknown method {m!r}; expected some of {METHODS}")
    if len(set(cfg.fusion.methods)) != len(cfg.fusion.methods):
        bad("fusion.methods", "duplicate method")
    if cfg.fusion.process_noise < 0:
        bad("fusion.process_noise", "must be >= 0")
    s = cfg.scene
    if s.width < 8 or s.height < 8:
        bad("scene.width/height", f"image must be at least 8x8, got {s.width}x{s.height}")
    if s.num_frames < 2:
        bad("scene.num_frames", f"must be >= 2, got {s.num_frames}")
    if s.num_sequences < 1:
        bad("scene.num_sequences", "must be >= 1")
    if s.num_objects < 0:
        bad("scene.num_objects", "must be >= 0")
    t = cfg.train
    if t.sequence_length < 2:
        bad("train.sequence_length", f"must be >= 2, got {t.sequence_length}")
    if t.frames_per_sequence < t.sequence_length:
        bad("train.frames_per_sequence", "must be >= train.sequence_length")
    if t.epochs < 0 or t.batch_size < 1 or t.num_sequences < 1 or t.pixels_per_frame < 0:
        bad("train", "epochs >= 0, batch_size >= 1, num_sequences >= 1, pixels_per_frame >= 0 required")
    if not t.learning_rate > 0:
        bad("train.learning_rate", "must be > 0")
    try:
        s.rig()
    except (ValueError, ConfigError) as exc:
        bad("scene", str(exc))
    return cfg


def from_dict(raw: dict, path: str = "<dict>") -> ExperimentConfig:
    kwargs = {"source": path}
    for key, value in raw.items():
        if key in _TOP:
            kwargs[key] = _coerce(value, ExperimentConfig.__dataclass_fields__[key].default, f"{path}: {key}")
        elif key in _SECTIONS:
            kwargs[key] = _build_section(key, value, path)
        else:
            raise InvalidConfig(f"{path}: unknown key '{key}'")
    return validate(ExperimentConfig(**kwargs))


def load_config(path) -> ExperimentConfig:
    path = os.fspath(path)
    try:
        with open(path, "rb") as f:
            raw = tomllib.load(f)
    except FileNotFoundError as exc:
        raise ConfigError(f"{path}: config file not found") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: TOML parse error: {exc}") from exc
    except UnicodeDecodeError as exc:
        raise ConfigError(f"{path}: not UTF-8: {exc}") from exc
    return from_dict(raw, path)
