"""Neural-network operations built on the autodiff core.

Convolutions are fused ops with hand-written backward passes (im2col /
col2im); the normalization layers are composed from primitives so their
gradients come from the tape.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ContractError, DimensionError


def _as_batched(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 3:
        return x.reshape((1,) + x.shape), True
    if x.ndim == 4:
        return x, False
    raise DimensionError(f"expected [C,H,W] or [B,C,H,W], got {x.shape}")


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2D cross-correlation. x: [B,C,H,W] or [C,H,W]; w: [Co,C,kh,kw]; b: [Co]."""
    x, squeeze = _as_batched(x)
    co, ci, kh, kw = w.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ConfigError(f"conv2d kernel extents must be odd, got {kh}x{kw}")
    if x.shape[1] != ci:
        raise DimensionError(f"conv2d channel mismatch: input has {x.shape[1]} channels, weight expects {ci}")

    bsz, _, h, wd = x.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise DimensionError(f"conv2d output would be empty for input {x.shape} kernel {kh}x{kw} stride {stride}")

    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    # [B,C,Ho,Wo,kh,kw] -> [B*Ho*Wo, C*kh*kw]
    col = np.ascontiguousarray(windows.transpose(0, 2, 3, 1, 4, 5)).reshape(bsz * ho * wo, ci * kh * kw)
    wm = w.data.reshape(co, ci * kh * kw)
    out = col @ wm.T
    if b is not None:
        out += b.data
    out = out.reshape(bsz, ho, wo, co).transpose(0, 3, 1, 2)

    def backward(g):
        gflat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(bsz * ho * wo, co)
        gw = (gflat.T @ col).reshape(w.shape)
        gb = None if b is None else gflat.sum(axis=0)
        gcol = (gflat @ wm).reshape(bsz, ho, wo, ci, kh, kw)
        gxp = np.zeros((bsz, ci, h + 2 * padding, wd + 2 * padding), dtype=x.dtype)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += gcol[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        gx = gxp[:, :, padding : padding + h, padding : padding + wd] if padding else gxp
        if b is None:
            return gx, gw
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    out_t = ad._node(np.ascontiguousarray(out), parents, backward)
    return out_t.reshape(out_t.shape[1:]) if squeeze else out_t


def depthwise_conv2d(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """3x3 depthwise convolution, stride 1, padding 1. w: [C,1,3,3]; channels never mix."""
    x, squeeze = _as_batched(x)
    if w.ndim != 4 or w.shape[1] != 1 or w.shape[2:] != (3, 3):
        raise ConfigError(f"depthwise_conv2d supports only [C,1,3,3] kernels, got {w.shape}")
    c = x.shape[1]
    if w.shape[0] != c:
        raise DimensionError(f"depthwise_conv2d channel mismatch: input {c}, weight {w.shape[0]}")

    bsz, _, h, wd = x.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (1, 1), (1, 1)))
    windows = sliding_window_view(xp, (3, 3), axis=(2, 3))  # [B,C,H,W,3,3]
    wk = w.data[:, 0]  # [C,3,3]
    out = np.einsum("bchwij,cij->bchw", windows, wk, optimize=True)
    if b is not None:
        out += b.data[None, :, None, None]

    def backward(g):
        gw = np.einsum("bchwij,bchw->cij", windows, g, optimize=True)[:, None]
        gb = None if b is None else g.sum(axis=(0, 2, 3))
        gxp = np.zeros((bsz, c, h + 2, wd + 2), dtype=x.dtype)
        for i in range(3):
            for j in range(3):
                gxp[:, :, i : i + h, j : j + wd] += g * wk[None, :, i, j, None, None]
        gx = gxp[:, :, 1 : 1 + h, 1 : 1 + wd]
        if b is None:
            return gx, gw
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    out_t = ad._node(np.ascontiguousarray(out), parents, backward)
    return out_t.reshape(out_t.shape[1:]) if squeeze else out_t


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalization over batch and spatial dims.

    Train mode normalizes with batch statistics (differentiable through
    them) and updates the running buffers in place; eval mode uses the
    running buffers as constants.
    """
    x, squeeze = _as_batched(x)
    bsz, c, h, w = x.shape
    n = bsz * h * w
    if n == 0:
        raise ContractError("batch_norm on an empty batch")
    gshape = (1, c, 1, 1)
    if training:
        mean = x.mean(axis=(0, 2, 3), keepdims=True)
        var = ((x - mean) ** 2).mean(axis=(0, 2, 3), keepdims=True)
        xhat = (x - mean) / (var + eps).sqrt()
        batch_mean = mean.data.reshape(c)
        batch_var = var.data.reshape(c)
        unbiased = batch_var * (n / (n - 1)) if n > 1 else batch_var
        running_mean *= 1.0 - momentum
        running_mean += momentum * batch_mean
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased
    else:
        rm = Tensor(running_mean.reshape(gshape).astype(x.dtype))
        rv = Tensor(running_var.reshape(gshape).astype(x.dtype))
        xhat = (x - rm) / (rv + eps).sqrt()
    out = xhat * gamma.reshape(gshape) + beta.reshape(gshape)
    return out.reshape(out.shape[1:]) if squeeze else out


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Standardize over the last axis, then apply the affine transform."""
    if x.shape[-1] != gamma.shape[-1]:
        raise DimensionError(f"layer_norm feature size {x.shape[-1]} != weight size {gamma.shape[-1]}")
    mean = x.mean(axis=-1, keepdims=True)
    var = ((x - mean) ** 2).mean(axis=-1, keepdims=True)
    xhat = (x - mean) / (var + eps).sqrt()
    return xhat * gamma + beta


def embedding(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise DimensionError(f"embedding ids out of range [0, {table.shape[0]})")
    return table[ids]


def dropout(x: Tensor, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    if not training or p <= 0.0:
        return x
    if rng is None:
        raise ContractError("dropout in training mode requires an rng")
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return x * Tensor(keep)


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    key = [slice(None)] * x.ndim
    key[axis] = slice(start, start + length)
    return x[tuple(key)]


def cross_entropy(logits: Tensor, targets, ignore_index: int | None = None) -> Tensor:
    """Mean token-level cross entropy; rows whose target equals
    ``ignore_index`` contribute nothing."""
    if logits.ndim != 2:
        raise DimensionError(f"cross_entropy expects [N,V] logits, got {logits.shape}")
    t = np.asarray(targets, dtype=np.int64)
    if t.shape != (logits.shape[0],):
        raise DimensionError(f"targets shape {t.shape} != ({logits.shape[0]},)")
    mask = np.ones_like(t, dtype=bool) if ignore_index is None else t != ignore_index
    n_valid = int(mask.sum())
    if n_valid == 0:
        raise ContractError("cross_entropy: every target is masked out")

    x = logits.data
    shifted = x - x.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - lse
    safe_t = np.where(mask, t, 0)
    picked = logp[np.arange(t.shape[0]), safe_t]
    value = -(picked * mask).sum() / n_valid

    def backward(g):
        probs = np.exp(logp)
        probs[np.arange(t.shape[0]), safe_t] -= 1.0
        probs *= (mask.astype(x.dtype) * (float(g) / n_valid))[:, None]
        return (probs,)

    return ad._node(np.asarray(value, dtype=x.dtype), (logits,), backward)
