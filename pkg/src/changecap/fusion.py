"""Single-stage fusion of the two refined feature maps.

A cosine-similarity map between the two features is broadcast-added to
both before merging.  The merge is concatenation (default) followed by a
1x1 reduction conv, or an elementwise sub/sum/product; either way the
merged feature passes through a bottleneck residual block.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import ModelConfig
from .errors import ConfigError, DimensionError
from .nn import BatchNorm2d, Conv2d, Module

# Reductions per axis option, as (C,H,W) axis tuples; compound options
# contribute one similarity map per reduction, each broadcast back.
AXIS_REDUCTIONS: dict[str, tuple[tuple[int, ...], ...]] = {
    "channel": ((0,),),
    "height": ((1,),),
    "width": ((2,),),
    "height_x_width": ((1, 2),),
    "height_and_width": ((1,), (2,)),
    "channel_hw": ((0,), (1, 2)),
    "channel_h_w": ((0,), (1,), (2,)),
    "none": (),
}


def cosine_map(z1: Tensor, z2: Tensor, axis="channel", eps: float = 1e-8) -> Tensor:
    """Cosine similarity between ``z1`` and ``z2`` reduced over ``axis``.

    ``axis`` is one of the single-reduction options ('channel', 'height',
    'width', 'height_x_width') or an explicit tuple of (C,H,W) axis
    indices.  Inputs are [C,H,W] or [B,C,H,W]; the reduced axes are kept
    with extent 1 so the result broadcasts back over them.  Zero vectors
    yield 0, not NaN.
    """
    if z1.shape != z2.shape:
        raise DimensionError(f"cosine_map shape mismatch: {z1.shape} vs {z2.shape}")
    if isinstance(axis, str):
        reductions = AXIS_REDUCTIONS.get(axis)
        if not reductions or len(reductions) != 1:
            raise ConfigError(f"cosine_map needs a single-reduction axis, got {axis!r}")
        axes = reductions[0]
    else:
        axes = tuple(axis)
    offset = z1.ndim - 3  # batched inputs shift the (C,H,W) axes right
    axes = tuple(a + offset for a in axes)
    num = (z1 * z2).sum(axis=axes, keepdims=True)
    d1 = (z1 * z1).sum(axis=axes, keepdims=True)
    d2 = (z2 * z2).sum(axis=axes, keepdims=True)
    denom = ad.sqrt(ad.clamp_min(d1 * d2, eps * eps))
    return num / denom


def similarity_terms(z1: Tensor, z2: Tensor, axis: str, eps: float = 1e-8) -> list[Tensor]:
    """All similarity maps for a configured axis option (possibly several)."""
    if axis not in AXIS_REDUCTIONS:
        raise ConfigError(f"unknown cosine_axis {axis!r}; valid: {tuple(AXIS_REDUCTIONS)}")
    return [cosine_map(z1, z2, axes, eps) for axes in AXIS_REDUCTIONS[axis]]


class DifferenceFusion(Module):
    """Merge the two encoded maps into one [B,C,H,W] feature."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        c = cfg.model_dim
        self.method = cfg.fusion_method
        self.cosine_axis = cfg.cosine_axis
        self.eps = cfg.cosine_eps
        if self.method == "concat":
            self.reduce_conv = Conv2d(2 * c, c, 1, rng, dtype=dtype)
            self.reduce_bn = BatchNorm2d(c, dtype=dtype)
        # Bottleneck-style residual block: 1x1 -> 3x3 -> 1x1, BN+ReLU on the
        # first two, BN only on the last, identity shortcut, no post-add act.
        self.conv1 = Conv2d(c, c, 1, rng, dtype=dtype)
        self.bn1 = BatchNorm2d(c, dtype=dtype)
        self.conv2 = Conv2d(c, c, 3, rng, padding=1, dtype=dtype)
        self.bn2 = BatchNorm2d(c, dtype=dtype)
        self.conv3 = Conv2d(c, c, 1, rng, dtype=dtype)
        self.bn3 = BatchNorm2d(c, dtype=dtype)

    def forward(self, z1: Tensor, z2: Tensor) -> Tensor:
        if z1.shape != z2.shape:
            raise DimensionError(f"fusion inputs differ in shape: {z1.shape} vs {z2.shape}")
        for sim in similarity_terms(z1, z2, self.cosine_axis, self.eps):
            z1 = z1 + sim
            z2 = z2 + sim
        if self.method == "concat":
            merged = ad.concat([z1, z2], axis=-3)
            merged = ad.relu(self.reduce_bn(self.reduce_conv(merged)))
        elif self.method == "sub":
            merged = z1 - z2
        elif self.method == "sum":
            merged = z1 + z2
        elif self.method == "product":
            merged = z1 * z2
        else:
            raise ConfigError(f"unknown fusion method {self.method!r}")
        r = ad.relu(self.bn1(self.conv1(merged)))
        r = ad.relu(self.bn2(self.conv2(r)))
        r = self.bn3(self.conv3(r))
        return r + merged
