"""Flat key=value run configuration with command-line overrides.

One pair per line, ``#`` starts a comment; ``--key value`` flags override
file values.  Unknown keys and invariant violations raise ConfigError,
which the CLI maps to exit code 2.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

from .losses import LossConfig
from .model import ModelConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # model
    num_scales: int = 4
    channels: tuple[int, ...] = (32, 64, 128, 256)
    ratio_s: float = 0.5
    grid_rows: int = 3
    grid_cols: int = 6
    use_synthesis: bool = True
    # training
    batch_size: int = 8
    base_lr: float = 2e-4
    decay_factor: float = 0.8
    decay_every: int = 0
    total_iters: int = 20000
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    checkpoint_every: int = 2000
    log_every: int = 50
    crop: int = 64
    val_fraction: float = 0.05
    flip: bool = True
    # loss
    alpha: float = 1.0
    beta: float = 0.1
    charbonnier_eps: float = 1e-6
    # synthetic data
    canvas_h: int = 64
    canvas_w: int = 64
    num_objects: int = 2
    vel_min: float = 0.5
    vel_max: float = 3.0
    frames_per_group: int = 12
    num_groups: int = 20
    # execution
    deterministic: bool = True
    threads: int = 0  # 0: leave BLAS threading alone

    def model_config(self) -> ModelConfig:
        try:
            return ModelConfig(
                num_scales=self.num_scales, channels=self.channels,
                ratio_s=self.ratio_s, grid_rows=self.grid_rows,
                grid_cols=self.grid_cols, use_synthesis=self.use_synthesis,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def train_config(self) -> TrainConfig:
        try:
            return TrainConfig(
                batch_size=self.batch_size, base_lr=self.base_lr,
                decay_factor=self.decay_factor, decay_every=self.decay_every,
                total_iters=self.total_iters, beta1=self.beta1, beta2=self.beta2,
                adam_eps=self.adam_eps, seed=self.seed,
                checkpoint_every=self.checkpoint_every, log_every=self.log_every,
                crop=self.crop, val_fraction=self.val_fraction, flip=self.flip,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def loss_config(self) -> LossConfig:
        try:
            return LossConfig(alpha=self.alpha, beta=self.beta,
                              charbonnier_eps=self.charbonnier_eps)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def synth_config(self, seed: Optional[int] = None):
        from .data import SynthConfig

        try:
            return SynthConfig(
                canvas=(self.canvas_h, self.canvas_w),
                num_objects=self.num_objects,
                velocity_range=(self.vel_min, self.vel_max),
                frames_per_group=self.frames_per_group,
                seed=self.seed if seed is None else seed,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def echo(self) -> str:
        lines = [f"{f.name}={_format(getattr(self, f.name))}" for f in fields(self)]
        return "\n".join(lines)


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def _parse_value(name: str, text: str, target_type) -> object:
    text = text.strip()
    try:
        if target_type is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if target_type is int:
            return int(text)
        if target_type is float:
            return float(text)
        if target_type is tuple:
            return tuple(int(v) for v in text.split(","))
    except ValueError as exc:
        raise ConfigError(f"config key {name!r}: cannot parse value {text!r}") from exc
    raise ConfigError(f"config key {name!r}: unsupported type")


def parse_config(path=None, overrides: Optional[dict[str, str]] = None) -> RunConfig:
    """Resolve defaults <- file <- flag overrides and validate invariants."""
    field_types = {f.name: (tuple if f.name == "channels" else type(getattr(RunConfig(), f.name)))
                   for f in fields(RunConfig)}
    values: dict[str, object] = {}

    def apply(name: str, text: str) -> None:
        if name not in field_types:
            raise ConfigError(f"unknown config key {name!r}")
        values[name] = _parse_value(name, text, field_types[name])

    if path is not None:
        content = Path(path).read_text()
        for lineno, line in enumerate(content.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, val = line.partition("=")
            apply(key.strip(), val)
    for key, val in (overrides or {}).items():
        apply(key, val)

    cfg = RunConfig(**values)
    if not 0.0 <= cfg.ratio_s <= 1.0:
        raise ConfigError(f"ratio_s must be in [0,1], got {cfg.ratio_s}")
    if cfg.threads < 0:
        raise ConfigError("threads must be >= 0")
    # Surface sub-config invariant violations now, not at first use.
    cfg.model_config()
    cfg.train_config()
    cfg.loss_config()
    cfg.synth_config()
    return cfg
