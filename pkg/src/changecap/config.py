"""Model architecture configuration and its ablation switches."""

from __future__ import annotations

from dataclasses import dataclass, field, fields, asdict

import numpy as np

from .errors import ConfigError

ORDERINGS = ("sam_then_cam", "cam_then_sam", "parallel", "sam_only", "cam_only")
LOCAL_ENHANCE = ("dwconv", "conv1x1", "conv3x3", "none")
FFN_VARIANTS = ("gated", "standard")
FUSION_METHODS = ("concat", "sub", "sum", "product")
COSINE_AXES = (
    "channel", "height", "width", "height_x_width",
    "height_and_width", "channel_hw", "channel_h_w", "none",
)


@dataclass
class ModelConfig:
    """Every architecture hyperparameter and ablation switch in one place."""

    model_dim: int = 64
    heads: int = 4
    encoder_layers: int = 3
    decoder_layers: int = 1
    ordering: str = "sam_then_cam"
    share_layernorm: bool = True
    cam_local_enhance: str = "dwconv"
    ffn_variant: str = "gated"
    encoder_ffn_hidden: int | None = None  # defaults to 4 * model_dim
    decoder_ffn_hidden: int | None = None  # defaults to 4 * model_dim
    feature_hw: int = 8
    image_size: int = 32
    backbone_channels: int = 128
    fusion_method: str = "concat"
    cosine_axis: str = "channel"
    cosine_eps: float = 1e-8
    max_len: int = 40
    dropout: float = 0.1
    vocab_size: int = 0
    dtype: str = "float32"

    def validate(self):
        c = self.model_dim
        if c < 1 or c % self.heads != 0:
            raise ConfigError(f"model_dim {c} must be positive and divisible by heads {self.heads}")
        if self.encoder_layers < 0:
            raise ConfigError("encoder_layers must be >= 0")
        if self.decoder_layers < 1:
            raise ConfigError("decoder_layers must be >= 1")
        if self.max_len < 2:
            raise ConfigError("max_len must be >= 2")
        if self.ordering not in ORDERINGS:
            raise ConfigError(f"unknown ordering {self.ordering!r}; valid: {ORDERINGS}")
        if self.cam_local_enhance not in LOCAL_ENHANCE:
            raise ConfigError(f"unknown cam_local_enhance {self.cam_local_enhance!r}; valid: {LOCAL_ENHANCE}")
        if self.ffn_variant not in FFN_VARIANTS:
            raise ConfigError(f"unknown ffn_variant {self.ffn_variant!r}; valid: {FFN_VARIANTS}")
        if self.fusion_method not in FUSION_METHODS:
            raise ConfigError(f"unknown fusion_method {self.fusion_method!r}; valid: {FUSION_METHODS}")
        if self.cosine_axis not in COSINE_AXES:
            raise ConfigError(f"unknown cosine_axis {self.cosine_axis!r}; valid: {COSINE_AXES}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be float32 or float64")
        if self.feature_hw < 1 or self.image_size % self.feature_hw != 0:
            raise ConfigError(f"image_size {self.image_size} must be a multiple of feature_hw {self.feature_hw}")
        ratio = self.image_size // self.feature_hw
        if ratio & (ratio - 1) != 0 or ratio > 16:
            raise ConfigError(f"image_size / feature_hw must be a power of two <= 16, got {ratio}")
        return self

    @property
    def np_dtype(self):
        return np.float64 if self.dtype == "float64" else np.float32

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d).validate()


@dataclass
class TrainConfig:
    """Optimizer and loop hyperparameters."""

    learning_rate: float = 1e-4
    epochs: int = 50
    batch_size: int = 8
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip: float | None = 5.0
    seed: int = 0
    caption_strategy: str = "cycle"  # cycle | first
    eval_every: int = 1

    def validate(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.caption_strategy not in ("cycle", "first"):
            raise ConfigError("caption_strategy must be 'cycle' or 'first'")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d).validate()


def parse_config_file(text: str) -> dict:
    """Parse the flat key=value config format ('#' starts a comment)."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def coerce_config_values(raw: dict, model: ModelConfig, train: TrainConfig) -> tuple[ModelConfig, TrainConfig]:
    """Apply string key=value overrides onto the two config dataclasses."""
    model_fields = {f.name: f for f in fields(ModelConfig)}
    train_fields = {f.name: f for f in fields(TrainConfig)}
    mdict, tdict = model.to_dict(), train.to_dict()
    for key, value in raw.items():
        if key in model_fields:
            mdict[key] = _coerce_field(value, mdict[key], key)
        elif key in train_fields:
            tdict[key] = _coerce_field(value, tdict[key], key)
        else:
            raise ConfigError(f"unknown config key {key!r}")
    return ModelConfig.from_dict(mdict), TrainConfig.from_dict(tdict)


def _coerce_field(value: str, current, key: str):
    if isinstance(value, str):
        if value.lower() in ("none", "null"):
            return None
        if isinstance(current, bool) or value.lower() in ("true", "false"):
            return value.lower() == "true"
        if isinstance(current, int) and not isinstance(current, bool):
            return int(value)
        if isinstance(current, float):
            return float(value)
        if current is None:
            # Optional numeric fields (hidden sizes, grad_clip).
            try:
                return int(value)
            except ValueError:
                return float(value)
    return value
