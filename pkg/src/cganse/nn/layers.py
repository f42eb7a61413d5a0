"""Layer modules built on :mod:`cganse.nn.functional`."""

from __future__ import annotations

import numpy as np

from . import functional as F
from .tensor import Parameter


class Module:
    """Container with parameters, buffers (non-trainable state) and a train flag."""

    training = True

    def children(self):
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + name, value
        for name, child in self.children():
            yield from child.named_parameters(prefix + name + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        for name, value in getattr(self, "buffers", {}).items():
            yield prefix + name, value
        for name, child in self.children():
            yield from child.named_buffers(prefix + name + ".")

    def train(self, mode=True):
        self.training = mode
        for _, child in self.children():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Dense(Module):
    def __init__(self, d_in, d_out, dtype=np.float64, bias=True):
        self.weight = Parameter(np.zeros((d_in, d_out), dtype=dtype))
        self.bias = Parameter(np.zeros(d_out, dtype=dtype)) if bias else None

    def forward(self, x):
        return F.dense(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, c_in, c_out, k=5, stride=2, pad=2, dtype=np.float64, bias=True):
        self.stride, self.pad = stride, pad
        self.weight = Parameter(np.zeros((c_out, c_in, k, k), dtype=dtype))
        self.bias = Parameter(np.zeros(c_out, dtype=dtype)) if bias else None

    def forward(self, x):
        return F.conv2d(x, self.weight, self.bias, self.stride, self.pad)


class ConvTranspose2d(Module):
    def __init__(self, c_in, c_out, k=5, stride=2, pad=2, output_padding=1,
                 dtype=np.float64, bias=True):
        self.stride, self.pad, self.output_padding = stride, pad, output_padding
        self.weight = Parameter(np.zeros((c_in, c_out, k, k), dtype=dtype))
        self.bias = Parameter(np.zeros(c_out, dtype=dtype)) if bias else None

    def forward(self, x):
        return F.conv_transpose2d(x, self.weight, self.bias, self.stride, self.pad,
                                  self.output_padding)


class BatchNorm(Module):
    def __init__(self, channels, momentum=0.1, eps=1e-5, dtype=np.float64):
        self.momentum, self.eps = momentum, eps
        self.gamma = Parameter(np.ones(channels, dtype=dtype))
        self.beta = Parameter(np.zeros(channels, dtype=dtype))
        self.buffers = {
            "running_mean": np.zeros(channels, dtype=dtype),
            "running_var": np.ones(channels, dtype=dtype),
        }

    def forward(self, x):
        return F.batch_norm(x, self.gamma, self.beta, self.buffers["running_mean"],
                            self.buffers["running_var"], self.training,
                            self.momentum, self.eps)


class Dropout(Module):
    def __init__(self, p=0.5, rng=None):
        self.p = p
        self.rng = rng if rng is not None else np.random.default_rng(0)

    def forward(self, x):
        return F.dropout(x, self.p, self.training, self.rng)
