"""Run configuration and its ``key = value`` text format.

Blank lines and ``#`` comments are ignored; unknown keys, duplicate keys
and malformed values are errors that carry the offending line number.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

from .backbone import BackboneConfig
from .fusion import SamplerConfig
from .geoadapter import AdapterVariant
from .losses import LossConfig
from .synthscene import WORLD_TYPES, SceneSpec


class ConfigError(ValueError):
    pass


def _parse_schedule(text: str) -> tuple[tuple[int, int], ...]:
    """``"0:0, 0:30, 100:100"`` -> ((0, 0), (0, 30), (100, 100)) as (camera%, depth%)."""
    out = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        cam, _, dep = item.partition(":")
        if not _:
            raise ValueError(f"schedule entry {item!r} is not camera:depth")
        pair = (int(cam), int(dep))
        if not all(0 <= v <= 100 for v in pair):
            raise ValueError(f"schedule percentages must lie in 0..100, got {item!r}")
        out.append(pair)
    return tuple(out)


DEFAULT_SCHEDULE = ((0, 0), (0, 30), (0, 50), (0, 70), (0, 100),
                    (30, 0), (50, 0), (70, 0), (100, 0), (100, 100))


@dataclass
class RunConfig:
    # trunk
    dim: int = 64
    layers: int = 4
    heads: int = 4
    patch: int = 8
    registers: int = 2
    image_height: int = 32
    image_width: int = 32
    mlp_ratio: int = 2
    camera_head_layers: int = 2
    dtype: str = "float32"
    # adapter
    variant: str = "default"
    # stochastic fusion
    rgb_only_prob: float = 0.10
    seed: int = 0
    # loss
    alpha: float = 0.2
    grad_term: bool = True
    # optimisation; the large-scale recipe is AdamW at 2e-5 (heads) / 1e-5
    # (trunk) with 5k warmup steps and cosine decay
    optimizer: str = "sgd"
    lr: float = 1e-4
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.0
    clip_grad: float = 0.0
    steps: int = 200
    batch_size: int = 1
    frames: int = 4
    variable_frames: bool = False
    min_frames: int = 2
    log_every: int = 0
    # training scenes
    train_scenes: int = 20
    scene_frames: int = 8
    scene_seed: int = 1000
    world: str = "mixed"
    radius_min: float = 3.0
    radius_max: float = 4.5
    jitter: float = 0.15
    fov_min: float = 0.8
    fov_max: float = 1.2
    top_n: int = 5
    pose_trans_weight: float = 1.0
    # evaluation
    eval_scenes: int = 20
    eval_seed: int = 500000
    eval_frames: int = 4
    eval_schedule: tuple = DEFAULT_SCHEDULE
    eval_depth_subset: str = "random"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        try:
            self.backbone_config()
            self.sampler_config()
            self.loss_config()
            AdapterVariant(self.variant)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.optimizer not in ("sgd", "momentum", "adam"):
            raise ConfigError(f"optimizer must be sgd, momentum or adam, got {self.optimizer!r}")
        if self.world not in WORLD_TYPES + ("mixed",):
            raise ConfigError(f"world must be one of {WORLD_TYPES + ('mixed',)}")
        if self.eval_depth_subset not in ("random", "prefix"):
            raise ConfigError("eval_depth_subset must be random or prefix")
        if self.frames < 1 or self.eval_frames < 1 or self.frames > self.scene_frames:
            raise ConfigError("need 1 <= frames <= scene_frames and eval_frames >= 1")
        if self.steps < 0 or self.batch_size < 1 or self.lr <= 0:
            raise ConfigError("steps >= 0, batch_size >= 1 and lr > 0 required")
        if not (0 < self.fov_min <= self.fov_max < math.pi):
            raise ConfigError("fov range must lie in (0, pi)")
        for cam, dep in self.eval_schedule:
            if not (0 <= cam <= 100 and 0 <= dep <= 100):
                raise ConfigError(f"schedule entry {cam}:{dep} outside 0..100")

    def backbone_config(self) -> BackboneConfig:
        return BackboneConfig(
            dim=self.dim, layers=self.layers, heads=self.heads, patch=self.patch,
            registers=self.registers, height=self.image_height, width=self.image_width,
            mlp_ratio=self.mlp_ratio, camera_head_layers=self.camera_head_layers, dtype=self.dtype,
        )

    def sampler_config(self) -> SamplerConfig:
        return SamplerConfig(self.rgb_only_prob, self.seed)

    def loss_config(self) -> LossConfig:
        return LossConfig(self.alpha, self.grad_term)

    def scene_spec(self, seed: int, num_frames: int | None = None) -> SceneSpec:
        world = self.world
        if world == "mixed":
            world = WORLD_TYPES[seed % len(WORLD_TYPES)]
        return SceneSpec(
            seed=seed, num_frames=num_frames or self.scene_frames, height=self.image_height,
            width=self.image_width, world=world, radius_range=(self.radius_min, self.radius_max),
            jitter=self.jitter, fov_range=(self.fov_min, self.fov_max),
        )

    def replace(self, **changes) -> RunConfig:
        return dataclasses.replace(self, **changes)

    def dumps(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "eval_schedule":
                v = ", ".join(f"{c}:{d}" for c, d in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


def _convert(name: str, raw: str, kind):
    if kind is bool or kind == "bool":
        low = raw.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"{name}: expected a boolean, got {raw!r}")
    if kind is int or kind == "int":
        return int(raw)
    if kind is float or kind == "float":
        return float(raw)
    if name == "eval_schedule":
        return _parse_schedule(raw)
    return raw


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    known = {f.name: f.type for f in fields(RunConfig)}
    values: dict[str, object] = {}
    seen_at: dict[str, int] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        key, sep, raw = stripped.partition("=")
        key, raw = key.strip(), raw.strip()
        if not sep or not key:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line.strip()!r}")
        if key not in known:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in seen_at:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r} (first set on line {seen_at[key]})")
        try:
            values[key] = _convert(key, raw, known[key])
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from exc
        seen_at[key] = lineno
    return RunConfig(**values)


def load_config(path: str | Path) -> RunConfig:
    p = Path(path)
    return parse_config(p.read_text(), str(p))
