"""Backend selection for the convolution lowering kernels.

The compiled extension ``cganse._kernels`` is used when it was built; otherwise
the numpy implementation in ``cganse._kernels_py`` is used. Set
``CGANSE_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("CGANSE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        pass
    else:
        _impl = _compiled
        BACKEND = "compiled"


def im2col(x, k, stride, pad, ho, wo):
    """(N, C, H, W) -> (N, C*k*k, ho*wo) patch matrix."""
    return _impl.im2col(x, k, stride, pad, ho, wo)


def col2im(cols, shape, k, stride, pad, ho, wo):
    """Scatter-add adjoint of :func:`im2col` into an array of ``shape``."""
    return _impl.col2im(cols, tuple(shape), k, stride, pad, ho, wo)


def adam_update(p, g, m, v, b1, b2, step, root_c2, eps):
    """In place: m, v <- moment updates; p -= step * m / (sqrt(v) / root_c2 + eps)."""
    _impl.adam_update(p, g, m, v, b1, b2, step, root_c2, eps)
