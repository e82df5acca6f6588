"""Pipeline configuration: one JSON file, validated on load, hashed into outputs."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError

# OpenXR 26-joint hand layout: 0 palm, 1 wrist, then metacarpal..tip per finger
# (thumb has no intermediate joint).
DEFAULT_FINGER_CHAINS = (
    (2, 3, 4, 5),
    (6, 7, 8, 9, 10),
    (11, 12, 13, 14, 15),
    (16, 17, 18, 19, 20),
    (21, 22, 23, 24, 25),
)

IDENTITY_QUAT = (1.0, 0.0, 0.0, 0.0)


@dataclass
class UpperConfig:
    window: int = 11
    order: int = 3
    factor: int = 5
    min_frames: int = 200
    # wrist-local correction applied to human wrist rotations, (w, x, y, z)
    calibration_left: tuple = IDENTITY_QUAT
    calibration_right: tuple = IDENTITY_QUAT
    max_step_rotation: float = 0.5

    def validate(self):
        _check_savgol(self.window, self.order)
        _positive_int("upper.factor", self.factor)
        _positive_int("upper.min_frames", self.min_frames)
        for name in ("calibration_left", "calibration_right"):
            q = getattr(self, name)
            if len(q) != 4 or abs(sum(c * c for c in q) - 1.0) > 1e-6:
                raise ConfigError(f"upper.{name} must be a unit quaternion (w, x, y, z)")
        _positive("upper.max_step_rotation", self.max_step_rotation)


@dataclass
class LowerConfig:
    window: int = 11
    order: int = 3
    factor: int = 5
    min_frames: int = 200
    vx_th: float = 0.05
    vy_th: float = 0.05
    yaw_th: float = 0.1
    dz_th: float = 0.0025
    eps_still: float = 1e-3
    heading_source: str = "tangent"
    max_dz: float = 0.1
    # deployment metadata: speed the controller runs each primitive at
    primitive_speed: dict = field(default_factory=lambda: {"linear": 0.5, "yaw": 0.6})

    def validate(self):
        _check_savgol(self.window, self.order)
        _positive_int("lower.factor", self.factor)
        _positive_int("lower.min_frames", self.min_frames)
        for name in ("vx_th", "vy_th", "yaw_th", "dz_th", "eps_still", "max_dz"):
            _positive(f"lower.{name}", getattr(self, name))
        if self.heading_source not in ("tangent", "yaw"):
            raise ConfigError("lower.heading_source must be 'tangent' or 'yaw'")
        for key in ("linear", "yaw"):
            _positive(f"lower.primitive_speed.{key}", self.primitive_speed.get(key, -1))


@dataclass
class GripperConfig:
    lowpass_hz: float = 5.0
    window: int = 11
    order: int = 3
    factor: int = 5
    kappa_close: float = 25.0
    kappa_open: float = 15.0
    chains: tuple = DEFAULT_FINGER_CHAINS

    def validate(self):
        _positive("gripper.lowpass_hz", self.lowpass_hz)
        _check_savgol(self.window, self.order)
        _positive_int("gripper.factor", self.factor)
        if not self.kappa_open <= self.kappa_close:
            raise ConfigError("gripper.kappa_open must not exceed gripper.kappa_close")
        seen = set()
        for chain in self.chains:
            if len(chain) < 4:
                raise ConfigError("every finger chain needs at least 4 joints")
            for j in chain:
                if not 0 <= j < 26 or j in seen:
                    raise ConfigError(f"finger chain index {j} invalid or repeated")
                seen.add(j)


@dataclass
class ViewConfig:
    enabled: bool = True
    base_drop: float = 0.25
    perturb_bound: float = 0.05
    down_mode: str = "camera"
    depth_scale: float = 1.0
    inpaint: str = "nearest"
    inpaint_cmd: str | None = None
    inpaint_timeout: float = 120.0

    def validate(self):
        if self.base_drop < 0:
            raise ConfigError("view.base_drop must be >= 0")
        if self.perturb_bound < 0:
            raise ConfigError("view.perturb_bound must be >= 0")
        if self.down_mode not in ("camera", "gravity"):
            raise ConfigError("view.down_mode must be 'camera' or 'gravity'")
        _positive("view.depth_scale", self.depth_scale)
        if self.inpaint not in ("nearest", "none", "external"):
            raise ConfigError("view.inpaint must be 'nearest', 'none' or 'external'")
        if self.inpaint == "external" and not self.inpaint_cmd:
            raise ConfigError("view.inpaint='external' requires view.inpaint_cmd")
        _positive("view.inpaint_timeout", self.inpaint_timeout)


@dataclass
class ManifestConfig:
    ratio: tuple = (1, 2)
    batch_size: int = 256
    steps: int = 20000
    # which human frames the trainer should read: view-aligned or raw
    human_frames: str = "aligned"

    def validate(self):
        if len(self.ratio) != 2 or min(self.ratio) < 0 or sum(self.ratio) <= 0:
            raise ConfigError("manifest.ratio must be two non-negative numbers, not both zero")
        _positive_int("manifest.batch_size", self.batch_size)
        _positive_int("manifest.steps", self.steps)
        if self.human_frames not in ("aligned", "original"):
            raise ConfigError("manifest.human_frames must be 'aligned' or 'original'")


@dataclass
class PipelineConfig:
    rate: float = 100.0
    seed: int = 0
    upper: UpperConfig = field(default_factory=UpperConfig)
    lower: LowerConfig = field(default_factory=LowerConfig)
    gripper: GripperConfig = field(default_factory=GripperConfig)
    view: ViewConfig = field(default_factory=ViewConfig)
    manifest: ManifestConfig = field(default_factory=ManifestConfig)

    def validate(self):
        _positive("rate", self.rate)
        for section in (self.upper, self.lower, self.gripper, self.view, self.manifest):
            section.validate()
        return self

    def to_dict(self):
        return _plain(dataclasses.asdict(self))

    @classmethod
    def from_dict(cls, data):
        data = dict(data or {})
        sections = {
            "upper": UpperConfig, "lower": LowerConfig, "gripper": GripperConfig,
            "view": ViewConfig, "manifest": ManifestConfig,
        }
        kwargs = {}
        for key, value in data.items():
            if key in sections:
                kwargs[key] = _build_section(sections[key], key, value)
            elif key in ("rate", "seed"):
                kwargs[key] = value
            else:
                raise ConfigError(f"unknown config key {key!r}")
        try:
            cfg = cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        return cfg.validate()

    @classmethod
    def load(cls, path):
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        return cls.from_dict(data)

    def config_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _build_section(kind, name, value):
    if not isinstance(value, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    names = {f.name for f in dataclasses.fields(kind)}
    unknown = set(value) - names
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {sorted(unknown)}")
    value = dict(value)
    for key in ("calibration_left", "calibration_right", "ratio"):
        if key in value:
            value[key] = tuple(value[key])
    if "chains" in value:
        value["chains"] = tuple(tuple(int(j) for j in c) for c in value["chains"])
    return kind(**value)


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _check_savgol(window, order):
    if not isinstance(window, int) or window < 1 or window % 2 == 0:
        raise ConfigError(f"Savitzky-Golay window must be a positive odd integer, got {window!r}")
    if not isinstance(order, int) or not 0 <= order < window:
        raise ConfigError(f"Savitzky-Golay order must be in [0, window), got {order!r}")


def _positive(name, value):
    if not isinstance(value, (int, float)) or not value > 0:
        raise ConfigError(f"{name} must be positive, got {value!r}")


def _positive_int(name, value):
    if not isinstance(value, int) or value < 1:
        raise ConfigError(f"{name} must be a positive integer, got {value!r}")
