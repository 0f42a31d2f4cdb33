"""Feature extraction and the stacked spatial-channel attention encoder.

Both temporal images pass through the same parameter set (siamese): a
small strided CNN backbone, a positional-embedding conv stem that maps
backbone channels down to the model width, and then a stack of blocks
that attend over spatial positions (HW tokens) and over channels
(cross-covariance attention with a learnable temperature), finished by a
convolutional feed-forward network.

Blocks are pre-norm: y = x + block(LN(x)).  The channel-attention block
additionally keeps its internal residual, so its output already includes
its (normalized) input once.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from . import functional as F
from .autodiff import Tensor
from .config import ModelConfig
from .errors import ConfigError, DimensionError
from .nn import (
    BatchNorm2d,
    Conv2d,
    DepthwiseConv2d,
    Embedding,
    LayerNorm,
    Linear,
    Module,
    Parameter,
)


def map_to_tokens(x: Tensor) -> Tensor:
    """[B,C,H,W] -> [B,HW,C]"""
    b, c, h, w = x.shape
    return x.reshape((b, c, h * w)).transpose(0, 2, 1)


def tokens_to_map(x: Tensor, hw: tuple[int, int]) -> Tensor:
    """[B,N,C] -> [B,C,H,W] with N == H*W"""
    b, n, c = x.shape
    h, w = hw
    if n != h * w:
        raise DimensionError(f"token count {n} != {h}x{w}")
    return x.transpose(0, 2, 1).reshape((b, c, h, w))


class ConvBackbone(Module):
    """Four conv-BN-ReLU stages; stride-2 stages are front-loaded so the
    output spatial size equals ``feature_hw``."""

    STAGE_CHANNELS = (16, 32, 64)

    def __init__(self, image_size: int, feature_hw: int, out_channels: int,
                 rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        ratio = image_size // feature_hw
        n_downsample = int(math.log2(ratio)) if ratio > 1 else 0
        if 2**n_downsample != ratio or n_downsample > 4:
            raise ConfigError(f"backbone cannot map {image_size} -> {feature_hw}")
        channels = list(self.STAGE_CHANNELS) + [out_channels]
        strides = [2] * n_downsample + [1] * (4 - n_downsample)
        self.convs = []
        self.bns = []
        c_in = 3
        for c_out, stride in zip(channels, strides):
            self.convs.append(Conv2d(c_in, c_out, 3, rng, stride=stride, padding=1, dtype=dtype))
            self.bns.append(BatchNorm2d(c_out, dtype=dtype))
            c_in = c_out
        self.out_channels = out_channels

    def forward(self, images: Tensor) -> Tensor:
        x = images
        for conv, bn in zip(self.convs, self.bns):
            x = ad.relu(bn(conv(x)))
        return x


class ConvStem(Module):
    """Learnable 2D positional embedding, two 1x1 conv-BN-ReLU layers, and
    a bare 3x3 depthwise convolution."""

    def __init__(self, in_channels: int, out_channels: int, hw: int,
                 rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.pos = Parameter(rng.normal(0.0, 0.02, size=(in_channels, hw, hw)), dtype=dtype)
        self.conv1 = Conv2d(in_channels, out_channels, 1, rng, dtype=dtype)
        self.bn1 = BatchNorm2d(out_channels, dtype=dtype)
        self.conv2 = Conv2d(out_channels, out_channels, 1, rng, dtype=dtype)
        self.bn2 = BatchNorm2d(out_channels, dtype=dtype)
        self.dwconv = DepthwiseConv2d(out_channels, rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-3:] != self.pos.shape:
            raise DimensionError(f"input {x.shape} incompatible with positional embedding {self.pos.shape}")
        x = x + self.pos
        x = ad.relu(self.bn1(self.conv1(x)))
        x = ad.relu(self.bn2(self.conv2(x)))
        return self.dwconv(x)


class SpatialAttention(Module):
    """Multi-head scaled dot-product attention over spatial positions."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        if dim % heads != 0:
            raise ConfigError(f"dim {dim} not divisible by heads {heads}")
        self.heads = heads
        self.head_dim = dim // heads
        self.w_q = Linear(dim, dim, rng, bias=False, dtype=dtype)
        self.w_k = Linear(dim, dim, rng, bias=False, dtype=dtype)
        self.w_v = Linear(dim, dim, rng, bias=False, dtype=dtype)
        self.w_out = Linear(dim, dim, rng, bias=True, dtype=dtype)
        self.last_attention: np.ndarray | None = None

    def _split(self, x: Tensor) -> Tensor:
        b, n, c = x.shape
        return x.reshape((b, n, self.heads, self.head_dim)).transpose(0, 2, 1, 3)

    def forward(self, tokens: Tensor) -> Tensor:
        b, n, c = tokens.shape
        q = self._split(self.w_q(tokens))
        k = self._split(self.w_k(tokens))
        v = self._split(self.w_v(tokens))
        logits = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(self.head_dim))
        att = ad.softmax(logits, axis=-1)
        self.last_attention = att.data
        ctx = (att @ v).transpose(0, 2, 1, 3).reshape((b, n, c))
        return self.w_out(ctx)


class ChannelAttention(Module):
    """Cross-covariance attention over channels with a learnable
    temperature, a local-enhancement branch on the values, and the
    internal residual on its own input."""

    def __init__(self, dim: int, local_enhance: str, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.dim = dim
        self.qkv = Linear(dim, 3 * dim, rng, bias=True, dtype=dtype)
        self.alpha = Parameter(np.array([math.sqrt(dim)]), dtype=dtype)
        self.local_enhance = local_enhance
        if local_enhance == "dwconv":
            self.local_conv = DepthwiseConv2d(dim, rng, dtype=dtype)
        elif local_enhance == "conv1x1":
            self.local_conv = Conv2d(dim, dim, 1, rng, dtype=dtype)
        elif local_enhance == "conv3x3":
            self.local_conv = Conv2d(dim, dim, 3, rng, padding=1, dtype=dtype)
        elif local_enhance == "none":
            self.local_conv = None
        else:
            raise ConfigError(f"unknown local enhance mode {local_enhance!r}")
        self.local_bn = BatchNorm2d(dim, dtype=dtype) if self.local_conv is not None else None
        self.last_attention: np.ndarray | None = None

    def forward(self, tokens: Tensor, hw: tuple[int, int]) -> Tensor:
        c = self.dim
        qkv = self.qkv(tokens)
        q = F.narrow(qkv, -1, 0, c)
        k = F.narrow(qkv, -1, c, c)
        v = F.narrow(qkv, -1, 2 * c, c)
        logits = (q.transpose(0, 2, 1) @ k) / self.alpha
        att = ad.softmax(logits, axis=-1)  # [B,C,C], rows sum to 1
        self.last_attention = att.data
        out = v @ att
        if self.local_conv is not None:
            local = self.local_bn(self.local_conv(tokens_to_map(v, hw)))
            out = out + map_to_tokens(ad.gelu(local))
        return out + tokens


class ConvFFN(Module):
    """Feed-forward block with a 3x3 depthwise convolution for locality.

    The gated variant splits the expanded hidden feature in two halves,
    convolves one, and gates by elementwise product before the
    down-projection; the standard variant convolves the whole hidden
    feature.
    """

    def __init__(self, dim: int, variant: str, rng: np.random.Generator,
                 hidden: int | None = None, dtype=np.float32):
        super().__init__()
        hidden = 4 * dim if hidden is None else hidden
        if variant == "gated":
            if hidden % 2 != 0:
                raise ConfigError(f"gated feed-forward needs an even hidden dim, got {hidden}")
            self.half = hidden // 2
            self.fc1 = Linear(dim, hidden, rng, dtype=dtype)
            self.dwconv = DepthwiseConv2d(self.half, rng, dtype=dtype)
            self.fc2 = Linear(self.half, dim, rng, dtype=dtype)
        elif variant == "standard":
            self.fc1 = Linear(dim, hidden, rng, dtype=dtype)
            self.dwconv = DepthwiseConv2d(hidden, rng, dtype=dtype)
            self.fc2 = Linear(hidden, dim, rng, dtype=dtype)
        else:
            raise ConfigError(f"unknown ffn variant {variant!r}")
        self.variant = variant

    def forward(self, tokens: Tensor, hw: tuple[int, int]) -> Tensor:
        h = ad.gelu(self.fc1(tokens))
        if self.variant == "gated":
            l1 = F.narrow(h, -1, 0, self.half)
            l2 = F.narrow(h, -1, self.half, self.half)
            l1 = map_to_tokens(self.dwconv(tokens_to_map(l1, hw)))
            return self.fc2(l1 * l2)
        h = map_to_tokens(self.dwconv(tokens_to_map(h, hw)))
        return self.fc2(h)


class EncoderBlock(Module):
    """One encoder stage in the configured ordering of the spatial and
    channel attention branches, followed by the feed-forward block."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        c = cfg.model_dim
        self.ordering = cfg.ordering
        use_sam = cfg.ordering != "cam_only"
        use_cam = cfg.ordering != "sam_only"
        self.sam = SpatialAttention(c, cfg.heads, rng, dtype=dtype) if use_sam else None
        self.cam = ChannelAttention(c, cfg.cam_local_enhance, rng, dtype=dtype) if use_cam else None
        self.ln_sam = LayerNorm(c, dtype=dtype) if use_sam else None
        if use_cam:
            shared = cfg.share_layernorm and use_sam
            self.ln_cam = self.ln_sam if shared else LayerNorm(c, dtype=dtype)
        else:
            self.ln_cam = None
        self.ln_ffn = LayerNorm(c, dtype=dtype)
        self.ffn = ConvFFN(c, cfg.ffn_variant, rng, hidden=cfg.encoder_ffn_hidden, dtype=dtype)

    def forward(self, x: Tensor, hw: tuple[int, int]) -> Tensor:
        o = self.ordering
        if o == "sam_then_cam":
            x = x + self.sam(self.ln_sam(x))
            x = x + self.cam(self.ln_cam(x), hw)
        elif o == "cam_then_sam":
            x = x + self.cam(self.ln_cam(x), hw)
            x = x + self.sam(self.ln_sam(x))
        elif o == "parallel":
            x = (x + self.sam(self.ln_sam(x))) + (x + self.cam(self.ln_cam(x), hw))
        elif o == "sam_only":
            x = x + self.sam(self.ln_sam(x))
        elif o == "cam_only":
            x = x + self.cam(self.ln_cam(x), hw)
        else:
            raise ConfigError(f"unknown ordering {o!r}")
        return x + self.ffn(self.ln_ffn(x), hw)


class SpatialChannelEncoder(Module):
    """Backbone + conv stem + stacked attention blocks; applied
    identically to both temporal images."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.cfg = cfg
        self.backbone = ConvBackbone(cfg.image_size, cfg.feature_hw, cfg.backbone_channels, rng, dtype=dtype)
        self.stem = ConvStem(cfg.backbone_channels, cfg.model_dim, cfg.feature_hw, rng, dtype=dtype)
        self.blocks = [EncoderBlock(cfg, rng, dtype=dtype) for _ in range(cfg.encoder_layers)]

    def extract_features(self, images: Tensor) -> Tensor:
        """Backbone features [B,C_o,h,w] from raw images [B,3,S,S]."""
        return self.backbone(images)

    def encode_features(self, feats: Tensor) -> Tensor:
        """Refine backbone (or precomputed) features into [B,C,h,w]."""
        hw = (self.cfg.feature_hw, self.cfg.feature_hw)
        x = self.stem(feats)
        tokens = map_to_tokens(x)
        for block in self.blocks:
            tokens = block(tokens, hw)
        return tokens_to_map(tokens, hw)

    def forward(self, images: Tensor) -> Tensor:
        return self.encode_features(self.extract_features(images))
