"""Minimal module system: parameter containers and the standard layers."""

from __future__ import annotations

import math

import numpy as np

from . import functional as F
from .autodiff import Tensor
from .errors import ConfigError


class Parameter(Tensor):
    """A leaf tensor that participates in optimization."""

    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)


def uniform_fan_in(rng: np.random.Generator, shape, fan_in: int, dtype) -> Parameter:
    bound = 1.0 / math.sqrt(fan_in)
    return Parameter(rng.uniform(-bound, bound, size=shape), dtype=dtype)


class Module:
    """Base class with recursive parameter/buffer discovery."""

    def __init__(self):
        self.training = True

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def _children(self):
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "", _seen=None):
        """Yield (dotted_name, Parameter); shared modules are visited once."""
        if _seen is None:
            _seen = set()
        for name, value in vars(self).items():
            if isinstance(value, Parameter) and id(value) not in _seen:
                _seen.add(id(value))
                yield (f"{prefix}{name}", value)
        for name, child in self._children():
            if id(child) in _seen:
                continue
            _seen.add(id(child))
            yield from child.named_parameters(f"{prefix}{name}.", _seen)

    def parameters(self):
        for _, p in self.named_parameters():
            yield p

    def named_buffers(self, prefix: str = "", _seen=None):
        if _seen is None:
            _seen = set()
        buffers = getattr(self, "_buffers", {})
        for name, value in buffers.items():
            if id(value) not in _seen:
                _seen.add(id(value))
                yield (f"{prefix}{name}", value)
        for name, child in self._children():
            if id(child) in _seen:
                continue
            _seen.add(id(child))
            yield from child.named_buffers(f"{prefix}{name}.", _seen)

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def train(self, mode: bool = True):
        self.training = mode
        for _, child in self._children():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator,
                 bias: bool = True, dtype=np.float32):
        super().__init__()
        self.weight = uniform_fan_in(rng, (in_features, out_features), in_features, dtype)
        self.bias = Parameter(np.zeros(out_features), dtype=dtype) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        out = x @ self.weight
        if self.bias is not None:
            out = out + self.bias
        return out


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 rng: np.random.Generator, stride: int = 1, padding: int = 0,
                 bias: bool = True, dtype=np.float32):
        super().__init__()
        k = kernel_size
        fan_in = in_channels * k * k
        self.weight = uniform_fan_in(rng, (out_channels, in_channels, k, k), fan_in, dtype)
        self.bias = Parameter(np.zeros(out_channels), dtype=dtype) if bias else None
        self.stride = stride
        self.padding = padding

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class DepthwiseConv2d(Module):
    """3x3 per-channel convolution, padding 1."""

    def __init__(self, channels: int, rng: np.random.Generator, bias: bool = True, dtype=np.float32):
        super().__init__()
        self.weight = uniform_fan_in(rng, (channels, 1, 3, 3), 9, dtype)
        self.bias = Parameter(np.zeros(channels), dtype=dtype) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.depthwise_conv2d(x, self.weight, self.bias)


class BatchNorm2d(Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5, dtype=np.float32):
        super().__init__()
        self.gamma = Parameter(np.ones(channels), dtype=dtype)
        self.beta = Parameter(np.zeros(channels), dtype=dtype)
        self.momentum = momentum
        self.eps = eps
        self._buffers = {
            "running_mean": np.zeros(channels, dtype=dtype),
            "running_var": np.ones(channels, dtype=dtype),
        }

    def forward(self, x: Tensor) -> Tensor:
        return F.batch_norm(
            x, self.gamma, self.beta,
            self._buffers["running_mean"], self._buffers["running_var"],
            self.training, self.momentum, self.eps,
        )


class LayerNorm(Module):
    def __init__(self, features: int, eps: float = 1e-5, dtype=np.float32):
        super().__init__()
        self.gamma = Parameter(np.ones(features), dtype=dtype)
        self.beta = Parameter(np.zeros(features), dtype=dtype)
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return F.layer_norm(x, self.gamma, self.beta, self.eps)


class Embedding(Module):
    def __init__(self, num_embeddings: int, dim: int, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        if num_embeddings < 1:
            raise ConfigError("embedding table needs at least one entry")
        self.weight = Parameter(rng.normal(0.0, 0.02, size=(num_embeddings, dim)), dtype=dtype)

    def forward(self, ids) -> Tensor:
        return F.embedding(self.weight, ids)
