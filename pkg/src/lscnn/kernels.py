"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise the numpy
fallback. Set ``LSCNN_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("LSCNN_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"

pool_out_size = _kernels_py.pool_out_size
im2col = _impl.im2col
col2im = _impl.col2im
maxpool_forward = _impl.maxpool_forward
maxpool_backward = _impl.maxpool_backward

# fused batchnorm + scale + ReLU exists only in the compiled core; layers.py
# composes the separate numpy ops when this is None
bn_relu_forward = getattr(_impl, "bn_relu_forward", None)
bn_relu_backward = getattr(_impl, "bn_relu_backward", None)
