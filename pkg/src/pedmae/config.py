"""Flat `key = value` run configuration.

One assignment per line, `#` starts a comment, unknown keys are fatal — a
typo must never silently fall back to a default. Defaults mirror the training
and architecture defaults used across the package.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .backbone import EncoderConfig
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # optimization
    epochs: int = 100
    warmup_epochs: int = 20
    base_lr: float = 1.2e-3
    weight_decay: float = 0.05
    batch_size: int = 64
    seed: int = 0
    mask_ratio: float = 0.75
    max_shift: int = 64
    loss_lambda: float = 1.0
    beta: float = 2.0
    mask_strategy: str = "block"
    # encoder
    embed_dim: int = 768
    depth: int = 12
    num_heads: int = 12
    mlp_ratio: float = 4.0
    patch_size: int = 16
    use_class_token: bool = True
    # decoders (embed_dim 0 means: 512 capped at the encoder width)
    decoder_embed_dim: int = 0
    decoder_num_heads: int = 8
    # geometry and paths
    image_height: int = 256
    image_width: int = 128
    data_dir: str = ""
    out_dir: str = "runs/pretrain"

    @property
    def image_size(self) -> tuple[int, int]:
        return (self.image_height, self.image_width)

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(embed_dim=self.embed_dim, depth=self.depth,
                             num_heads=self.num_heads, mlp_ratio=self.mlp_ratio,
                             patch_size=self.patch_size,
                             use_class_token=self.use_class_token)

    def train_config(self) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, warmup_epochs=self.warmup_epochs,
                           base_lr=self.base_lr, weight_decay=self.weight_decay,
                           batch_size=self.batch_size, seed=self.seed,
                           mask_ratio=self.mask_ratio, max_shift=self.max_shift,
                           loss_lambda=self.loss_lambda, beta=self.beta,
                           mask_strategy=self.mask_strategy)

    def decoder_dim(self) -> int | None:
        return self.decoder_embed_dim or None


# config keys match field names except `lambda`, which is a Python keyword
_KEY_TO_FIELD = {"lambda": "loss_lambda"}
_FIELD_TO_KEY = {v: k for k, v in _KEY_TO_FIELD.items()}
_FIELDS = {f.name: f.type for f in fields(RunConfig)}


def _parse_value(key: str, field_name: str, raw: str, lineno: int):
    kind = _FIELDS[field_name]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            lowered = raw.lower()
            if lowered in ("true", "1", "yes", "on"):
                return True
            if lowered in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        return raw
    except ValueError:
        raise ConfigError(
            f"line {lineno}: invalid {kind} value {raw!r} for key '{key}'") from None


def parse_config_text(text: str) -> RunConfig:
    values: dict[str, object] = {}
    seen: set[str] = set()
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        key = key.strip()
        raw = raw.strip()
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw_line!r}")
        field_name = _KEY_TO_FIELD.get(key, key)
        if field_name not in _FIELDS or key in _FIELD_TO_KEY:
            raise ConfigError(f"unknown config key '{key}' (line {lineno})")
        if key in seen:
            raise ConfigError(f"duplicate config key '{key}' (line {lineno})")
        seen.add(key)
        values[field_name] = _parse_value(key, field_name, raw, lineno)
    try:
        return RunConfig(**values)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text())


def format_config(config: RunConfig) -> str:
    lines = []
    for f in fields(RunConfig):
        key = _FIELD_TO_KEY.get(f.name, f.name)
        value = getattr(config, f.name)
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
