"""Run configuration, loaded from JSON with strict key checking.

Every field below is a JSON key of the same name. Nested objects:
``net`` (NetConfig), ``optim``, ``fusion`` (FusionParams), ``prw``
(PrwParams), ``augment``, ``data``. Unknown keys raise :class:`ConfigError`
naming the offending key path.

Defaults not taken from the method description (ema_alpha,
quality_threshold, warmup_steps, patch size, c, beta, ...) are desk-scale
choices.
"""

from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError, IngestionError
from .fusion import FusionParams
from .model import NetConfig
from .superpixel import PrwParams
from .transfer import METHODS

VARIANTS = ("none", "cnn", "efficient")


@dataclass(frozen=True)
class OptimConfig:
    lr_encoder: float = 6e-5
    lr_decoder: float = 6e-4
    weight_decay: float = 0.01
    warmup_steps: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr_encoder < 0 or self.lr_decoder < 0:
            raise ConfigError("optim learning rates must be >= 0")
        if self.warmup_steps < 0:
            raise ConfigError("optim.warmup_steps must be >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("optim betas must lie in [0, 1)")


@dataclass(frozen=True)
class AugmentConfig:
    enabled: bool = True
    jitter: float = 0.25
    blur_prob: float = 0.5
    sigma_min: float = 0.15
    sigma_max: float = 1.15

    def __post_init__(self):
        if self.jitter < 0 or not 0 <= self.blur_prob <= 1:
            raise ConfigError("augment.jitter must be >= 0 and augment.blur_prob in [0, 1]")


@dataclass(frozen=True)
class DataConfig:
    root: str | None = None  # dataset directory; None = synthetic, in memory
    seed: int = 0
    classes: int = 4
    n_images: int = 200
    size: int = 64
    n_eval: int = 50


@dataclass(frozen=True)
class RunConfig:
    net: NetConfig = field(default_factory=NetConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    ema_alpha: float = 0.99
    quality_threshold: float = 0.968
    target_loss_weight: float = 1.0
    transfer: str = "histogram_match"
    precomputed_dir: str | None = None
    fusion_variant: str = "efficient"
    fusion: FusionParams = field(default_factory=FusionParams)
    prw_enabled: bool = True
    prw: PrwParams = field(default_factory=PrwParams)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    data: DataConfig = field(default_factory=DataConfig)
    total_steps: int = 2000
    batch_size: int = 2
    seed: int = 0
    eval_interval: int = 0
    checkpoint_interval: int = 0
    output_dir: str = "run"

    def __post_init__(self):
        if not 0.0 <= self.ema_alpha <= 1.0:
            raise ConfigError(f"ema_alpha must lie in [0, 1], got {self.ema_alpha}")
        if not 0.0 <= self.quality_threshold <= 1.0:
            raise ConfigError(f"quality_threshold must lie in [0, 1], got {self.quality_threshold}")
        if self.target_loss_weight < 0:
            raise ConfigError("target_loss_weight must be >= 0")
        if self.transfer not in METHODS:
            raise ConfigError(f"transfer must be one of {METHODS}, got {self.transfer!r}")
        if self.transfer == "precomputed" and not self.precomputed_dir:
            raise ConfigError("precomputed_dir is required when transfer is 'precomputed'")
        if self.fusion_variant not in VARIANTS:
            raise ConfigError(f"fusion_variant must be one of {VARIANTS}, got {self.fusion_variant!r}")
        if self.total_steps < 0:
            raise ConfigError("total_steps must be >= 0")
        if self.batch_size < 2 or self.batch_size % 2:
            raise ConfigError("batch_size must be an even number >= 2 (half source, half target)")
        if self.eval_interval < 0 or self.checkpoint_interval < 0:
            raise ConfigError("eval_interval and checkpoint_interval must be >= 0")

    @property
    def per_domain_batch(self) -> int:
        return self.batch_size // 2

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _build(cls, raw, path: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"{path or 'config'}: expected a JSON object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in raw:
        if key not in names:
            raise ConfigError(f"unknown config key {path + key!r}")
    kwargs = {}
    for key, value in raw.items():
        hint = hints[key]
        if dataclasses.is_dataclass(hint):
            kwargs[key] = _build(hint, value, f"{path}{key}.")
        else:
            kwargs[key] = _coerce(hint, value, path + key)
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from exc


def _coerce(hint, value, key):
    origin = typing.get_args(hint)
    allowed = origin if origin else (hint,)
    if value is None:
        if type(None) in allowed:
            return None
        raise ConfigError(f"config key {key!r} must not be null")
    if bool in allowed:
        if not isinstance(value, bool):
            raise ConfigError(f"config key {key!r} must be a boolean")
        return value
    if int in allowed and float not in allowed:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"config key {key!r} must be an integer")
        return value
    if float in allowed:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"config key {key!r} must be a number")
        return float(value)
    if str in allowed:
        if not isinstance(value, str):
            raise ConfigError(f"config key {key!r} must be a string")
        return value
    return value


def config_from_dict(raw: dict) -> RunConfig:
    return _build(RunConfig, raw, "")


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise IngestionError(f"{path}: cannot read config ({exc})") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(raw)


def save_config(path, cfg: RunConfig) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
