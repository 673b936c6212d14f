# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled im2col / col2im, ceil-mode max pooling and fused batchnorm + ReLU.

Same contracts as ``lscnn._kernels_py``. Single-threaded by design so
results are bitwise reproducible.
"""
import numpy as np
cimport numpy as cnp
from cython cimport floating
from libc.math cimport sqrt

cnp.import_array()


cpdef Py_ssize_t pool_out_size(Py_ssize_t size, Py_ssize_t k, Py_ssize_t stride):
    cdef Py_ssize_t out
    if size <= k:
        return 1
    out = (size - k + stride - 1) // stride + 1
    if (out - 1) * stride >= size:
        out -= 1
    return out


def _im2col(floating[:, :, :, ::1] x, floating[:, :, ::1] col, Py_ssize_t k, Py_ssize_t stride):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ho = (h - k) // stride + 1, wo = (w - k) // stride + 1
    cdef Py_ssize_t b, ch, u, v, i, j, row, p
    with nogil:
        for b in range(n):
            for ch in range(c):
                for u in range(k):
                    for v in range(k):
                        row = (ch * k + u) * k + v
                        p = 0
                        for i in range(ho):
                            for j in range(wo):
                                col[b, row, p] = x[b, ch, i * stride + u, j * stride + v]
                                p += 1


def _col2im(floating[:, :, ::1] col, floating[:, :, :, ::1] x, Py_ssize_t k, Py_ssize_t stride):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ho = (h - k) // stride + 1, wo = (w - k) // stride + 1
    cdef Py_ssize_t b, ch, u, v, i, j, row, p
    with nogil:
        for b in range(n):
            for ch in range(c):
                for u in range(k):
                    for v in range(k):
                        row = (ch * k + u) * k + v
                        p = 0
                        for i in range(ho):
                            for j in range(wo):
                                x[b, ch, i * stride + u, j * stride + v] += col[b, row, p]
                                p += 1


def _maxpool_forward(floating[:, :, :, ::1] x, floating[:, :, :, ::1] out,
                     cnp.int64_t[:, :, :, ::1] argmax, Py_ssize_t k, Py_ssize_t stride):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ho = out.shape[2], wo = out.shape[3]
    cdef Py_ssize_t b, ch, i, j, r, s, r0, s0, r1, s1, best
    cdef floating m
    with nogil:
        for b in range(n):
            for ch in range(c):
                for i in range(ho):
                    r0 = i * stride
                    r1 = r0 + k
                    if r1 > h:
                        r1 = h
                    for j in range(wo):
                        s0 = j * stride
                        s1 = s0 + k
                        if s1 > w:
                            s1 = w
                        best = r0 * w + s0
                        m = x[b, ch, r0, s0]
                        for r in range(r0, r1):
                            for s in range(s0, s1):
                                # strict > keeps the first maximum in scan order
                                if x[b, ch, r, s] > m:
                                    m = x[b, ch, r, s]
                                    best = r * w + s
                        out[b, ch, i, j] = m
                        argmax[b, ch, i, j] = best


def _maxpool_backward(floating[:, :, :, ::1] dout, cnp.int64_t[:, :, :, ::1] argmax,
                      floating[:, :, ::1] dx):
    cdef Py_ssize_t n = dout.shape[0], c = dout.shape[1], ho = dout.shape[2], wo = dout.shape[3]
    cdef Py_ssize_t b, ch, i, j, bc
    with nogil:
        for b in range(n):
            for ch in range(c):
                bc = b * c + ch
                for i in range(ho):
                    for j in range(wo):
                        dx[bc, 0, argmax[b, ch, i, j]] += dout[b, ch, i, j]


def im2col(x, Py_ssize_t k, Py_ssize_t stride):
    x = np.ascontiguousarray(x)
    n, c, h, w = x.shape
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    col = np.empty((n, c * k * k, ho * wo), dtype=x.dtype)
    _im2col(x, col, k, stride)
    return col


def col2im(col, x_shape, Py_ssize_t k, Py_ssize_t stride):
    col = np.ascontiguousarray(col)
    x = np.zeros(tuple(x_shape), dtype=col.dtype)
    _col2im(col, x, k, stride)
    return x


def maxpool_forward(x, Py_ssize_t k, Py_ssize_t stride):
    x = np.ascontiguousarray(x)
    n, c, h, w = x.shape
    ho = pool_out_size(h, k, stride)
    wo = pool_out_size(w, k, stride)
    out = np.empty((n, c, ho, wo), dtype=x.dtype)
    argmax = np.empty((n, c, ho, wo), dtype=np.int64)
    _maxpool_forward(x, out, argmax, k, stride)
    return out, argmax


def maxpool_backward(dout, argmax, x_shape):
    dout = np.ascontiguousarray(dout)
    argmax = np.ascontiguousarray(argmax, dtype=np.int64)
    n, c, h, w = x_shape
    dx = np.zeros((n * c, 1, h * w), dtype=dout.dtype)
    _maxpool_backward(dout, argmax, dx)
    return dx.reshape(n, c, h, w)


cdef inline double _sum(const floating* a, Py_ssize_t p) noexcept nogil:
    cdef double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0
    cdef Py_ssize_t i = 0
    while i + 4 <= p:
        s0 += a[i]
        s1 += a[i + 1]
        s2 += a[i + 2]
        s3 += a[i + 3]
        i += 4
    while i < p:
        s0 += a[i]
        i += 1
    return (s0 + s1) + (s2 + s3)


cdef inline double _sqdev(const floating* a, Py_ssize_t p, double m) noexcept nogil:
    cdef double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0, d0, d1, d2, d3
    cdef Py_ssize_t i = 0
    while i + 4 <= p:
        d0 = a[i] - m
        d1 = a[i + 1] - m
        d2 = a[i + 2] - m
        d3 = a[i + 3] - m
        s0 += d0 * d0
        s1 += d1 * d1
        s2 += d2 * d2
        s3 += d3 * d3
        i += 4
    while i < p:
        d0 = a[i] - m
        s0 += d0 * d0
        i += 1
    return (s0 + s1) + (s2 + s3)


def _bn_relu_forward(floating[:, :, ::1] x, floating[:, :, ::1] xhat, floating[:, :, ::1] out,
                     double[::1] mean, double[::1] var, floating[::1] gamma, floating[::1] beta,
                     double eps, bint train):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], p = x.shape[2]
    cdef Py_ssize_t b, ch, i
    cdef double s, m, cnt = <double>(n * p)
    cdef floating fm, finv, g, bt, xh, y
    cdef const floating* xp
    cdef floating* hp
    cdef floating* op
    with nogil:
        for ch in range(c):
            if train:
                s = 0.0
                for b in range(n):
                    s += _sum(&x[b, ch, 0], p)
                m = s / cnt
                s = 0.0
                for b in range(n):
                    s += _sqdev(&x[b, ch, 0], p, m)
                mean[ch] = m
                var[ch] = s / cnt
            fm = <floating>mean[ch]
            finv = <floating>(1.0 / sqrt(var[ch] + eps))
            g = gamma[ch]
            bt = beta[ch]
            for b in range(n):
                xp = &x[b, ch, 0]
                hp = &xhat[b, ch, 0]
                op = &out[b, ch, 0]
                for i in range(p):
                    xh = (xp[i] - fm) * finv
                    hp[i] = xh
                    y = g * xh + bt
                    op[i] = y * (y > 0)


cdef inline void _masked_sums(const floating* d, const floating* o, const floating* h, Py_ssize_t p,
                              double* sb, double* sg) noexcept nogil:
    # sums of relu-masked d and of relu-masked d * h
    cdef double b0 = 0.0, b1 = 0.0, g0 = 0.0, g1 = 0.0
    cdef floating v0, v1
    cdef Py_ssize_t i = 0
    while i + 2 <= p:
        v0 = d[i] * (o[i] > 0)
        v1 = d[i + 1] * (o[i + 1] > 0)
        b0 += v0
        b1 += v1
        g0 += v0 * h[i]
        g1 += v1 * h[i + 1]
        i += 2
    while i < p:
        v0 = d[i] * (o[i] > 0)
        b0 += v0
        g0 += v0 * h[i]
        i += 1
    sb[0] += b0 + b1
    sg[0] += g0 + g1


def _bn_relu_backward(floating[:, :, ::1] dout, floating[:, :, ::1] out, floating[:, :, ::1] xhat,
                      floating[::1] gamma, double[::1] inv_std, floating[:, :, ::1] dx,
                      double[::1] dgamma, double[::1] dbeta, bint train):
    cdef Py_ssize_t n = dout.shape[0], c = dout.shape[1], p = dout.shape[2]
    cdef Py_ssize_t b, ch, i
    cdef double m = <double>(n * p)
    cdef double sg, sb
    cdef floating fsg, fsb, k1, k2
    cdef const floating* dp
    cdef const floating* op
    cdef const floating* hp
    cdef floating* xp
    with nogil:
        for ch in range(c):
            sg = 0.0
            sb = 0.0
            for b in range(n):
                _masked_sums(&dout[b, ch, 0], &out[b, ch, 0], &xhat[b, ch, 0], p, &sb, &sg)
            dgamma[ch] = sg
            dbeta[ch] = sb
            k1 = <floating>(gamma[ch] * inv_std[ch])
            for b in range(n):
                dp = &dout[b, ch, 0]
                op = &out[b, ch, 0]
                xp = &dx[b, ch, 0]
                for i in range(p):
                    xp[i] = dp[i] * (op[i] > 0)
            if train:
                k2 = <floating>(gamma[ch] * inv_std[ch] / m)
                fsb = <floating>sb
                fsg = <floating>sg
                for b in range(n):
                    hp = &xhat[b, ch, 0]
                    xp = &dx[b, ch, 0]
                    for i in range(p):
                        xp[i] = k1 * xp[i] - k2 * (fsb + hp[i] * fsg)
            else:
                for b in range(n):
                    xp = &dx[b, ch, 0]
                    for i in range(p):
                        xp[i] = k1 * xp[i]


def bn_relu_forward(x, gamma, beta, running_mean, running_var, bint train, double eps):
    """Fused batchnorm + scale + ReLU over x viewed as N x C x P.

    Returns ``(out, xhat, batch_mean, batch_var, inv_std)``; batch
    statistics are float64 (biased variance) and None in infer mode.
    """
    shape = x.shape
    n, c = shape[0], shape[1]
    x3 = np.ascontiguousarray(x).reshape(n, c, -1)
    xhat = np.empty_like(x3)
    out = np.empty_like(x3)
    if train:
        mean = np.empty(c, dtype=np.float64)
        var = np.empty(c, dtype=np.float64)
    else:
        mean = np.ascontiguousarray(running_mean, dtype=np.float64)
        var = np.ascontiguousarray(running_var, dtype=np.float64)
    g = np.ascontiguousarray(gamma, dtype=x3.dtype)
    bt = np.ascontiguousarray(beta, dtype=x3.dtype)
    _bn_relu_forward(x3, xhat, out, mean, var, g, bt, eps, train)
    inv_std = 1.0 / np.sqrt(var + eps)
    if train:
        return out.reshape(shape), xhat.reshape(shape), mean, var, inv_std
    return out.reshape(shape), xhat.reshape(shape), None, None, inv_std


def bn_relu_backward(dout, out, xhat, gamma, inv_std, bint train):
    shape = dout.shape
    n, c = shape[0], shape[1]
    d3 = np.ascontiguousarray(dout).reshape(n, c, -1)
    o3 = np.ascontiguousarray(out, dtype=d3.dtype).reshape(n, c, -1)
    x3 = np.ascontiguousarray(xhat, dtype=d3.dtype).reshape(n, c, -1)
    dx = np.empty_like(d3)
    dgamma = np.empty(c, dtype=np.float64)
    dbeta = np.empty(c, dtype=np.float64)
    _bn_relu_backward(d3, o3, x3, np.ascontiguousarray(gamma, dtype=d3.dtype),
                      np.ascontiguousarray(inv_std, dtype=np.float64), dx, dgamma, dbeta, train)
    return dx.reshape(shape), dgamma.astype(d3.dtype), dbeta.astype(d3.dtype)
