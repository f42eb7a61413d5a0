"""Central finite-difference verification of backward passes."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import functional as F
from .tensor import Tape, Tensor


@dataclass
class GradCheckReport:
    max_rel_error: float
    per_tensor: dict = field(default_factory=dict)

    def ok(self, tol):
        return self.max_rel_error < tol


def _rel_error(analytic, numeric, atol=0.0):
    scale = max(np.max(np.abs(numeric)), np.max(np.abs(analytic)), 1e-12)
    denom = np.maximum(np.abs(analytic) + np.abs(numeric), max(1e-3 * scale, atol))
    return float(np.max(np.abs(analytic - numeric) / denom))


def grad_check(fn, inputs, params=(), h=1e-5, seed=0, max_entries=None, atol=0.0):
    """Compare tape gradients of ``fn`` against central differences.

    ``fn`` takes the input tensors and returns a Tensor; non-scalar outputs are
    reduced with a fixed random projection. Gradients are checked for every
    input and every parameter in ``params``. ``max_entries`` caps the number
    of perturbed coordinates per tensor (chosen at random) for large models.
    ``atol`` floors the error denominator, for gradients that are exactly
    zero (a bias feeding batch norm) where only round-off is compared.
    """
    rng = np.random.default_rng(seed)
    inputs = [x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64)) for x in inputs]
    for x in inputs:
        x.requires_grad = True
        x.grad = None
    params = list(params)
    for p in params:
        p.grad = None

    probe = None

    def scalar_value():
        nonlocal probe
        out = fn(*inputs)
        if out.size == 1:
            return F.reshape(out, ())
        if probe is None:
            probe = Tensor(rng.standard_normal(out.shape).astype(out.dtype))
        return F.sum(F.mul(out, probe))

    with Tape() as tape:
        loss = scalar_value()
    tape.backward(loss)

    report = GradCheckReport(0.0)
    targets = [(f"input{i}", x) for i, x in enumerate(inputs)]
    targets += [(getattr(p, "name", None) or f"param{i}", p) for i, p in enumerate(params)]
    for name, t in targets:
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        numeric = np.zeros(len(idx))
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(scalar_value().data)
            flat[i] = orig - h
            fm = float(scalar_value().data)
            flat[i] = orig
            numeric[j] = (fp - fm) / (2 * h)
        err = _rel_error(analytic.reshape(-1)[idx], numeric, atol)
        report.per_tensor[name] = err
        report.max_rel_error = max(report.max_rel_error, err)
    return report
