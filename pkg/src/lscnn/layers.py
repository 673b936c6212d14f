"""Forward and backward passes for the layer kinds used by lsCNN and PatchNet.

All functions work on batches (N x C x H x W for maps, N x F for vectors)
and follow the dtype of their input, so a float64 input runs the whole
computation in float64 (used by the gradient checks).

Every ``*_forward`` returns ``(output, cache)``; the matching
``*_backward`` takes ``(dout, cache)``.
"""
from __future__ import annotations

import numpy as np

from . import kernels
from .errors import InvalidParameterError, ShapeError, StateError

BN_EPS = 1e-5
BN_EMA = 0.99
DROPOUT_RATE = 0.5

TRAIN = "train"
INFER = "infer"


def _check_mode(mode):
    if mode not in (TRAIN, INFER):
        raise InvalidParameterError(f"mode must be 'train' or 'infer', got {mode!r}")


# convolution

def conv2d_forward(x, weight, bias, stride=1):
    """Valid cross-correlation of ``x`` (N x Cin x H x W) with ``weight`` (Cout x Cin x k x k)."""
    if x.ndim != 4:
        raise ShapeError(f"conv input must be N x C x H x W, got shape {x.shape}")
    n, cin, h, w = x.shape
    cout, wcin, k, k2 = weight.shape
    if k != k2:
        raise ShapeError(f"conv kernel must be square, got {k}x{k2}")
    if wcin != cin:
        raise ShapeError(f"conv expects {wcin} input channels, got {cin}")
    if h < k or w < k:
        raise ShapeError(f"input {h}x{w} smaller than {k}x{k} kernel")
    if bias.shape != (cout,):
        raise ShapeError(f"bias shape {bias.shape} does not match {cout} output channels")
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    col = kernels.im2col(np.ascontiguousarray(x), k, stride)
    out = np.matmul(weight.reshape(cout, -1), col)
    out += bias.reshape(1, cout, 1)
    cache = (x.shape, col, weight, stride)
    return out.reshape(n, cout, ho, wo), cache


def conv2d_backward(dout, cache, need_input_grad=True):
    x_shape, col, weight, stride = cache
    n, cout, ho, wo = dout.shape
    k = weight.shape[2]
    d = dout.reshape(n, cout, ho * wo)
    dw = np.matmul(d, col.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape)
    db = d.sum(axis=(0, 2))
    dx = None
    if need_input_grad:
        dcol = np.matmul(weight.reshape(cout, -1).T, d)
        dx = kernels.col2im(dcol, x_shape, k, stride)
    return dx, {"weight": dw, "bias": db}


# pooling

def pool_output_size(size, k=2, stride=2):
    return kernels.pool_out_size(size, k, stride)


def maxpool_forward(x, k=2, stride=2):
    """Ceil-mode max pooling; edge windows are truncated to in-bounds pixels."""
    if x.ndim != 4:
        raise ShapeError(f"pool input must be N x C x H x W, got shape {x.shape}")
    out, argmax = kernels.maxpool_forward(np.ascontiguousarray(x), k, stride)
    return out, (x.shape, argmax)


def maxpool_backward(dout, cache):
    x_shape, argmax = cache
    return kernels.maxpool_backward(np.ascontiguousarray(dout), argmax, x_shape)


# batch normalization + scale

def _bn_axes(x):
    if x.ndim == 4:
        return (0, 2, 3), (1, -1, 1, 1)
    if x.ndim == 2:
        return (0,), (1, -1)
    raise ShapeError(f"batchnorm input must be N x C x H x W or N x C, got shape {x.shape}")


def batchnorm_forward(x, gamma, beta, running_mean, running_var, mode,
                      eps=BN_EPS, ema=BN_EMA):
    """Batch normalization followed by the learned scale/shift.

    Returns ``(out, cache, new_running_mean, new_running_var)``. Running
    statistics are never modified in place; in infer mode the returned
    statistics are the inputs unchanged.
    """
    _check_mode(mode)
    axes, bshape = _bn_axes(x)
    if mode == TRAIN:
        m = x.size // x.shape[1]
        if m < 2:
            raise InvalidParameterError(
                "train-mode batchnorm needs at least 2 values per channel (N*H*W >= 2)"
            )
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        new_mean = ema * running_mean + (1.0 - ema) * mean
        new_var = ema * running_var + (1.0 - ema) * var * (m / (m - 1))
        new_mean = new_mean.astype(running_mean.dtype)
        new_var = new_var.astype(running_var.dtype)
    else:
        mean, var = running_mean, running_var
        new_mean, new_var = running_mean, running_var
    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = (x - mean.reshape(bshape).astype(x.dtype)) * inv_std.reshape(bshape)
    out = gamma.reshape(bshape) * xhat + beta.reshape(bshape)
    return out, (mode, xhat, inv_std, gamma), new_mean, new_var


def batchnorm_backward(dout, cache):
    mode, xhat, inv_std, gamma = cache
    axes, bshape = _bn_axes(dout)
    dgamma = (dout * xhat).sum(axis=axes)
    dbeta = dout.sum(axis=axes)
    dxhat = dout * gamma.reshape(bshape)
    if mode == INFER:
        dx = dxhat * inv_std.reshape(bshape)
    else:
        m = dout.size // dout.shape[1]
        s1 = dxhat.sum(axis=axes).reshape(bshape)
        s2 = (dxhat * xhat).sum(axis=axes).reshape(bshape)
        dx = (inv_std.reshape(bshape) / m) * (m * dxhat - s1 - xhat * s2)
    return dx, {"gamma": dgamma, "beta": dbeta}


def bn_relu_forward(x, gamma, beta, running_mean, running_var, mode,
                    eps=BN_EPS, ema=BN_EMA):
    """Batchnorm + scale + ReLU in one step; same contract as :func:`batchnorm_forward`."""
    _check_mode(mode)
    if kernels.bn_relu_forward is None:
        y, bn_cache, rm, rv = batchnorm_forward(x, gamma, beta, running_mean, running_var, mode, eps, ema)
        out, relu_cache = relu_forward(y)
        return out, ("split", bn_cache, relu_cache), rm, rv
    _bn_axes(x)
    train = mode == TRAIN
    if train and x.size // x.shape[1] < 2:
        raise InvalidParameterError(
            "train-mode batchnorm needs at least 2 values per channel (N*H*W >= 2)"
        )
    out, xhat, mean, var, inv_std = kernels.bn_relu_forward(
        x, gamma, beta, running_mean, running_var, train, eps
    )
    if train:
        m = x.size // x.shape[1]
        rm = (ema * running_mean + (1.0 - ema) * mean).astype(running_mean.dtype)
        rv = (ema * running_var + (1.0 - ema) * var * (m / (m - 1))).astype(running_var.dtype)
    else:
        rm, rv = running_mean, running_var
    return out, ("fused", train, out, xhat, gamma, inv_std), rm, rv


def bn_relu_backward(dout, cache):
    if cache[0] == "split":
        _, bn_cache, relu_cache = cache
        return batchnorm_backward(relu_backward(dout, relu_cache), bn_cache)
    _, train, out, xhat, gamma, inv_std = cache
    dx, dgamma, dbeta = kernels.bn_relu_backward(dout, out, xhat, gamma, inv_std, train)
    return dx, {"gamma": dgamma, "beta": dbeta}


# activations, fully connected, dropout

def relu_forward(x):
    return np.maximum(x, 0), x > 0


def relu_backward(dout, cache):
    return dout * cache


def fc_forward(x, weight, bias):
    """``x`` is N x Nin (maps are flattened C-major); ``weight`` is Nout x Nin."""
    x2 = x.reshape(x.shape[0], -1)
    if x2.shape[1] != weight.shape[1]:
        raise ShapeError(f"fc expects {weight.shape[1]} inputs, got {x2.shape[1]}")
    out = x2 @ weight.T + bias
    return out, (x.shape, x2, weight)


def fc_backward(dout, cache):
    x_shape, x2, weight = cache
    dw = dout.T @ x2
    db = dout.sum(axis=0)
    dx = (dout @ weight).reshape(x_shape)
    return dx, {"weight": dw, "bias": db}


def dropout_forward(x, rate, mode, rng):
    """Inverted dropout: survivors are scaled by 1/(1-rate) at train time."""
    _check_mode(mode)
    if not 0 <= rate < 1:
        raise InvalidParameterError(f"dropout rate must be in [0, 1), got {rate}")
    if mode == INFER or rate == 0:
        return x, None
    keep = rng.random(x.shape) >= rate
    mask = keep.astype(x.dtype) / x.dtype.type(1.0 - rate)
    return x * mask, mask


def dropout_backward(dout, cache):
    return dout if cache is None else dout * cache


# loss

def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_xent(logits, labels):
    """Mean cross-entropy over a batch of 2-class logits.

    Returns ``(loss, probs, grad_logits)`` with ``grad_logits = (probs - onehot) / N``.
    """
    logits = np.asarray(logits)
    if logits.ndim != 2 or logits.shape[1] != 2:
        raise ShapeError(f"expected N x 2 logits, got shape {logits.shape}")
    labels = np.asarray(labels, dtype=np.int64)
    n = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsum
    probs = np.exp(logp)
    loss = float(-logp[np.arange(n), labels].astype(np.float64).mean())
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1
    grad /= n
    return loss, probs, grad


_BACKWARD = {
    "conv": conv2d_backward,
    "pool": maxpool_backward,
    "bn": batchnorm_backward,
    "bn_relu": bn_relu_backward,
    "relu": relu_backward,
    "fc": fc_backward,
    "dropout": dropout_backward,
}


def layer_backward(kind, cache, dout):
    """Dispatch to the backward pass for ``kind``.

    Returns ``(input_grad, param_grads)``; ``param_grads`` is empty for
    parameter-free layers.
    """
    if kind not in _BACKWARD:
        raise InvalidParameterError(f"unknown layer kind {kind!r}")
    if cache is None and kind not in ("dropout",):
        raise StateError(f"no cached forward state for {kind} layer")
    res = _BACKWARD[kind](dout, cache)
    if isinstance(res, tuple):
        return res
    return res, {}
