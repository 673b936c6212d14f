"""Pure numpy versions of the hot kernels.

Used when the compiled ``_kernels`` extension is unavailable, and as the
reference the compiled kernels are tested against.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def pool_out_size(size, k, stride):
    # ceil mode; a window hanging off the edge is truncated, one starting past it is dropped
    if size <= k:
        return 1
    out = (size - k + stride - 1) // stride + 1
    if (out - 1) * stride >= size:
        out -= 1
    return out


def im2col(x, k, stride):
    n, c, h, w = x.shape
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    # (n, c, ho, wo, k, k) -> (n, c, k, k, ho, wo)
    return np.ascontiguousarray(win[:, :, :ho, :wo].transpose(0, 1, 4, 5, 2, 3)).reshape(
        n, c * k * k, ho * wo
    )


def col2im(col, x_shape, k, stride):
    n, c, h, w = x_shape
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    col = col.reshape(n, c, k, k, ho, wo)
    x = np.zeros((n, c, h, w), dtype=col.dtype)
    for u in range(k):
        for v in range(k):
            x[:, :, u:u + stride * ho:stride, v:v + stride * wo:stride] += col[:, :, u, v]
    return x


def maxpool_forward(x, k, stride):
    n, c, h, w = x.shape
    ho = pool_out_size(h, k, stride)
    wo = pool_out_size(w, k, stride)
    hp = (ho - 1) * stride + k
    wp = (wo - 1) * stride + k
    padded = np.full((n, c, max(hp, h), max(wp, w)), -np.inf, dtype=x.dtype)
    padded[:, :, :h, :w] = x
    win = sliding_window_view(padded, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    flat = win.reshape(n, c, ho, wo, k * k)
    # argmax returns the first maximum in row-major window order
    local = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, local[..., None], axis=-1)[..., 0]
    du, dv = np.divmod(local, k)
    rows = np.arange(ho)[:, None] * stride + du
    cols = np.arange(wo)[None, :] * stride + dv
    argmax = (rows * w + cols).astype(np.int64)
    return np.ascontiguousarray(out), argmax


def maxpool_backward(dout, argmax, x_shape):
    n, c, h, w = x_shape
    dx = np.zeros((n * c, h * w), dtype=dout.dtype)
    idx = argmax.reshape(n * c, -1)
    rows = np.repeat(np.arange(n * c), idx.shape[1])
    np.add.at(dx, (rows, idx.ravel()), dout.reshape(n * c, -1).ravel())
    return dx.reshape(n, c, h, w)
