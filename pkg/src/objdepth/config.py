"""Experiment configuration: versioned YAML schema with strict validation.

Unknown keys are rejected.  Errors carry the dotted field path and, when
the YAML parser can tell, the line number.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

SCHEMA_VERSION = 1

CATEGORIES = (
    "car",
    "truck",
    "construction_vehicle",
    "bus",
    "trailer",
    "barrier",
    "motorcycle",
    "bicycle",
    "pedestrian",
    "traffic_cone",
)

# (length, width, height) in meters; heights drive the scale-to-depth prior
DEFAULT_SIZES = {
    "car": (4.5, 1.9, 1.5),
    "truck": (6.5, 2.5, 3.0),
    "construction_vehicle": (6.0, 2.8, 3.2),
    "bus": (11.0, 2.9, 3.3),
    "trailer": (10.0, 2.6, 3.9),
    "barrier": (0.5, 2.5, 1.0),
    "motorcycle": (2.1, 0.8, 1.4),
    "bicycle": (1.7, 0.6, 1.3),
    "pedestrian": (0.7, 0.7, 1.75),
    "traffic_cone": (0.4, 0.4, 0.8),
}


class ConfigError(ValueError):
    pass


@dataclass
class IntrinsicsConfig:
    fx: float = 180.0
    fy: float = 180.0
    cx: float = 95.5
    cy: float = 63.5
    width: int = 192
    height: int = 128


@dataclass
class CameraConfig:
    name: str = "cam"
    yaw_deg: float = 0.0
    position: list = field(default_factory=lambda: [0.0, 0.0, 1.5])
    intrinsics: IntrinsicsConfig = field(default_factory=IntrinsicsConfig)


@dataclass
class EgoMotionConfig:
    # pose of the ego frame at T-1 expressed in the ego frame at T
    translation: list = field(default_factory=lambda: [-2.0, 0.0, 0.0])
    yaw_deg: float = 0.0


@dataclass
class ObjectConfig:
    category: str = "car"
    camera: int = 0
    depth: float = 15.0
    lateral: float = 0.0
    yaw_deg: float = 0.0


@dataclass
class SceneConfig:
    depth_range: list = field(default_factory=lambda: [6.0, 30.0])
    world_extent: float = 51.2
    counts: dict = field(default_factory=dict)
    objects: list = field(default_factory=list)
    sizes: dict = field(default_factory=dict)
    max_retries: int = 200


@dataclass
class FeatureConfig:
    channels: int = 32
    # kernel width (m) and saturation level of the squared feature distance
    scale: float = 0.3
    energy: float = 256.0
    noise_sigma: float = 0.0


@dataclass
class LidarConfig:
    density: float = 0.3
    outlier_rate: float = 0.2
    outlier_shift: float = 5.0


@dataclass
class SBLConfig:
    enabled: bool = True
    schedule: list = field(default_factory=lambda: [12, 20])
    sigma_t: float = 1.0
    temperature: float = 1.0


@dataclass
class BevConfig:
    extent: float = 102.4
    cell: float = 0.8
    splat_background: bool = False


@dataclass
class MonoConfig:
    # per semantic-group Gaussian spread (m) of the deterministic decoder
    spreads: list = field(default_factory=lambda: [1.0, 1.0, 1.0, 0.5, 0.75, 0.5])


@dataclass
class ExperimentConfig:
    version: int = SCHEMA_VERSION
    cameras: list = field(
        default_factory=lambda: [
            CameraConfig("left", 90.0),
            CameraConfig("right", -90.0),
        ]
    )
    ego_motion: EgoMotionConfig = field(default_factory=EgoMotionConfig)
    scene: SceneConfig = field(
        default_factory=lambda: SceneConfig(counts={"car": 2, "truck": 1, "pedestrian": 1})
    )
    features: FeatureConfig = field(default_factory=FeatureConfig)
    lidar: LidarConfig = field(default_factory=LidarConfig)
    bins: str = "2:58:112"
    mono: MonoConfig = field(default_factory=MonoConfig)
    sbl: SBLConfig = field(default_factory=SBLConfig)
    fusion: str = "prob"
    bev: BevConfig = field(default_factory=BevConfig)
    loss_weights: list = field(default_factory=lambda: [1.0, 3.0, 0.5, 2.0])
    l_det: float = 0.0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


# element types of list-valued fields that hold nested sections
_LIST_ITEMS = {
    (ExperimentConfig, "cameras"): CameraConfig,
    (SceneConfig, "objects"): ObjectConfig,
}


def _build(cls, data: Any, path: str, lines: dict):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or '<root>'}: expected a mapping{_where(lines, path)}")
    known = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        sub = f"{path}.{key}" if path else str(key)
        if key not in known:
            raise ConfigError(f"{sub}: unknown field{_where(lines, sub)}")
        f = known[key]
        default = (
            f.default_factory() if f.default_factory is not dataclasses.MISSING else f.default
        )
        item_cls = _LIST_ITEMS.get((cls, key))
        if item_cls is not None:
            if not isinstance(value, list):
                raise ConfigError(f"{sub}: expected a list{_where(lines, sub)}")
            kwargs[key] = [
                _build(item_cls, v, f"{sub}[{i}]", lines) for i, v in enumerate(value)
            ]
        elif dataclasses.is_dataclass(default):
            kwargs[key] = _build(type(default), value, sub, lines)
        else:
            kwargs[key] = _coerce(default, value, sub, lines)
    return cls(**kwargs)


def _coerce(default, value, path, lines):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false{_where(lines, path)}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer{_where(lines, path)}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number{_where(lines, path)}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string{_where(lines, path)}")
        return value
    if isinstance(default, list) and not isinstance(value, list):
        raise ConfigError(f"{path}: expected a list{_where(lines, path)}")
    if isinstance(default, dict) and not isinstance(value, dict):
        raise ConfigError(f"{path}: expected a mapping{_where(lines, path)}")
    return value


def _where(lines: dict, path: str) -> str:
    line = lines.get(path)
    return f" (line {line})" if line else ""


def _key_lines(text: str) -> dict:
    """Map dotted key paths to 1-based source lines."""
    out = {}
    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return out

    def walk(node, path):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                sub = f"{path}.{k.value}" if path else str(k.value)
                out[sub] = k.start_mark.line + 1
                walk(v, sub)
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                sub = f"{path}[{i}]"
                out[sub] = v.start_mark.line + 1
                walk(v, sub)

    if root is not None:
        walk(root, "")
    return out


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    from .geometry import DepthBins, GeometryError

    if cfg.version != SCHEMA_VERSION:
        raise ConfigError(f"version: unsupported schema version {cfg.version}")
    if not cfg.cameras:
        raise ConfigError("cameras: at least one camera is required")
    try:
        DepthBins.parse(cfg.bins)
    except GeometryError as exc:
        raise ConfigError(f"bins: {exc}") from exc
    for name in list(cfg.scene.counts) + list(cfg.scene.sizes):
        if name not in CATEGORIES:
            raise ConfigError(f"scene: unknown category {name!r}")
    for i, obj in enumerate(cfg.scene.objects):
        if obj.category not in CATEGORIES:
            raise ConfigError(f"scene.objects[{i}].category: unknown category {obj.category!r}")
        if not 0 <= obj.camera < len(cfg.cameras):
            raise ConfigError(f"scene.objects[{i}].camera: no camera {obj.camera}")
    for name, size in cfg.scene.sizes.items():
        if len(size) != 3 or min(size) <= 0:
            raise ConfigError(f"scene.sizes.{name}: expected three positive extents")
    if not 0 < cfg.lidar.density <= 1:
        raise ConfigError("lidar.density: must lie in (0, 1]")
    if not 0 <= cfg.lidar.outlier_rate < 1:
        raise ConfigError("lidar.outlier_rate: must lie in [0, 1)")
    sched = cfg.sbl.schedule
    if not sched or any(b <= a for a, b in zip(sched, sched[1:])) or sched[0] < 2:
        raise ConfigError("sbl.schedule: must be non-empty, strictly increasing, first >= 2")
    if cfg.sbl.sigma_t <= 0:
        raise ConfigError("sbl.sigma_t: must be positive")
    if cfg.fusion not in ("prob", "logit"):
        raise ConfigError("fusion: must be 'prob' or 'logit'")
    if len(cfg.loss_weights) != 4 or min(cfg.loss_weights) < 0:
        raise ConfigError("loss_weights: expected four non-negative weights")
    if len(cfg.mono.spreads) != 6 or min(cfg.mono.spreads) <= 0:
        raise ConfigError("mono.spreads: expected six positive group spreads")
    if cfg.features.channels < 1:
        raise ConfigError("features.channels: must be >= 1")
    if not (cfg.features.scale > 0 and cfg.features.energy > 0):
        raise ConfigError("features: scale and energy must be positive")
    return cfg


def parse_config(text: str) -> ExperimentConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from exc
    if data is None:
        data = {}
    return validate(_build(ExperimentConfig, data, "", _key_lines(text)))


def load_config(path: str | Path | None) -> tuple[ExperimentConfig, bytes]:
    """Load a config file (or the built-in default) and return it with its bytes."""
    if path is None:
        cfg = validate(ExperimentConfig())
        return cfg, cfg.dump().encode()
    raw = Path(path).read_bytes()
    return parse_config(raw.decode()), raw


def digest(raw: bytes) -> str:
    return hashlib.sha256(raw).hexdigest()
