"""Optimizers and weight initialization."""

from __future__ import annotations

import numpy as np

from .. import kernels


class Adam:
    """Adam with bias correction. Defaults follow the DCGAN training recipe."""

    def __init__(self, params, lr=2e-4, beta1=0.5, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.step_count = 0

    def step(self):
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        step = self.lr / c1
        root_c2 = np.sqrt(c2)
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            kernels.adam_update(p.data, p.grad, m, v, self.beta1, self.beta2, step, root_c2, self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def state_dict(self):
        return {"step": self.step_count, "m": self.m, "v": self.v}


class SGD:
    """Plain SGD with optional heavy-ball momentum."""

    def __init__(self, params, lr=0.1, momentum=0.0):
        self.params = list(params)
        self.lr, self.momentum = lr, momentum
        self.velocity = [np.zeros_like(p.data) for p in self.params]
        self.step_count = 0

    def step(self):
        self.step_count += 1
        for p, vel in zip(self.params, self.velocity):
            if p.grad is None:
                continue
            if self.momentum:
                vel *= self.momentum
                vel += p.grad
                p.data -= self.lr * vel
            else:
                p.data -= self.lr * p.grad

    def zero_grad(self):
        for p in self.params:
            p.grad = None


def adam_step(params, grads, state):
    """Functional form: copy ``grads`` into ``params`` and apply one ``state`` step."""
    for p, g in zip(params, grads):
        p.grad = np.asarray(g, dtype=p.data.dtype)
    state.step()


def sgd_step(params, grads, lr):
    for p, g in zip(params, grads):
        p.data -= lr * np.asarray(g, dtype=p.data.dtype)


def init_normal(param, mean=0.0, std=0.02, seed=None, rng=None):
    """Fill ``param`` in place with N(mean, std^2) draws."""
    if rng is None:
        rng = np.random.default_rng(seed)
    param.data[...] = rng.normal(mean, std, size=param.shape)
    return param
