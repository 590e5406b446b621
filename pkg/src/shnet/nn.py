"""Parameter containers and the small layer zoo the architecture needs."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .tensor import Tensor, parameter


class Module:
    """Base class tracking parameters and submodules by attribute name.

    Attribute insertion order is the canonical parameter order, which keeps
    initialization, checkpoints, and optimizer state deterministic.
    """

    def named_parameters(self, prefix=""):
        for name, val in vars(self).items():
            key = f"{prefix}{name}"
            yield from _walk(key, val)

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def trainable_parameters(self):
        return [p for p in self.parameters() if p.requires_grad]

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()


def _walk(key, val):
    if isinstance(val, Tensor):
        yield key, val
    elif isinstance(val, Module):
        yield from val.named_parameters(prefix=key + ".")
    elif isinstance(val, (list, tuple)):
        for i, item in enumerate(val):
            yield from _walk(f"{key}.{i}", item)
    elif isinstance(val, dict):
        for k, item in val.items():
            yield from _walk(f"{key}.{k}", item)


class Linear(Module):
    """y = W x + b on column-vector tokens (x is in_dim x S)."""

    def __init__(self, in_dim, out_dim, rng, gain=1.0, bias=True):
        std = gain / np.sqrt(in_dim)
        self.w = parameter(rng.normal(0.0, std, size=(out_dim, in_dim)))
        self.b = parameter(np.zeros((out_dim, 1))) if bias else None

    def __call__(self, x):
        y = T.matmul(self.w, x)
        if self.b is not None:
            y = T.add(y, T.expand(self.b, y.shape))
        return y


class Conv2d(Module):
    def __init__(self, cin, cout, k, rng, stride=1, pad=0, dilation=1, gain=np.sqrt(2.0)):
        std = gain / np.sqrt(cin * k * k)
        self.w = parameter(rng.normal(0.0, std, size=(cout, cin, k, k)))
        self.b = parameter(np.zeros(cout))
        self.stride, self.pad, self.dilation = stride, pad, dilation

    def __call__(self, x):
        return T.conv2d(x, self.w, self.b, stride=self.stride, pad=self.pad,
                        dilation=self.dilation)


class Conv3d(Module):
    def __init__(self, cin, cout, kernel, rng, stride=1, pad=0, gain=np.sqrt(2.0)):
        kd, kh, kw = kernel
        std = gain / np.sqrt(cin * kd * kh * kw)
        self.w = parameter(rng.normal(0.0, std, size=(cout, cin, kd, kh, kw)))
        self.b = parameter(np.zeros(cout))
        self.stride, self.pad = stride, pad

    def __call__(self, x):
        return T.conv3d(x, self.w, self.b, stride=self.stride, pad=self.pad)


class ChannelLayerNorm(Module):
    """Learned-affine layer norm over the channel axis of a C x S matrix."""

    def __init__(self, channels, eps=1e-5):
        self.gamma = parameter(np.ones(channels))
        self.beta = parameter(np.zeros(channels))
        self.eps = eps

    def __call__(self, x):
        return T.layer_norm(x, self.gamma, self.beta, eps=self.eps)


def freeze(param, zero=False):
    """Stop a parameter from training (optionally clearing it first)."""
    if zero:
        param.data[...] = 0.0
    param.requires_grad = False
    return param


def check_same_shape(name, got, want):
    if tuple(got) != tuple(want):
        raise ShapeError(f"{name}: expected shape {tuple(want)}, got {tuple(got)}")
