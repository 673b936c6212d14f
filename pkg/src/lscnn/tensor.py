"""Tensor helpers.

Tensors are plain ``numpy.ndarray`` values, float32 by default, laid out
row-major as C x H x W (N x C x H x W for batches). All randomness flows
through :func:`make_rng`, which wraps numpy's PCG64 bit generator seeded
through a ``SeedSequence``. PCG64's output stream is fixed by numpy's
documented compatibility policy, so a seed reproduces the same samples on
every platform.
"""
from __future__ import annotations

import zlib
from typing import Sequence

import numpy as np

from .errors import InvalidParameterError, ShapeError

DTYPE = np.float32

Rng = np.random.Generator


def _key_to_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise InvalidParameterError(f"rng key must be non-negative, got {key}")
        return int(key)
    # crc32 is stable across processes, unlike hash()
    return zlib.crc32(str(key).encode("utf-8"))


def make_rng(seed: int, *keys) -> Rng:
    """Return a PCG64 generator for ``seed`` and an optional stream path.

    ``make_rng(7, "patchnet", 3)`` and ``make_rng(7, "patchnet", 4)`` are
    statistically independent streams that never depend on call order.
    """
    if seed < 0 or seed >= 2**64:
        raise InvalidParameterError(f"seed must be an unsigned 64-bit integer, got {seed}")
    entropy = [int(seed) & 0xFFFFFFFF, int(seed) >> 32] + [_key_to_int(k) for k in keys]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def _check_shape(shape: Sequence[int]) -> tuple[int, ...]:
    shape = tuple(int(d) for d in shape)
    if not shape or any(d < 1 for d in shape):
        raise ShapeError(f"invalid shape {shape}: need at least one dimension, all >= 1")
    return shape


def zeros(shape: Sequence[int], dtype=DTYPE) -> np.ndarray:
    return np.zeros(_check_shape(shape), dtype=dtype)


def fill_normal(shape: Sequence[int], mean: float, std: float, rng: Rng, dtype=DTYPE) -> np.ndarray:
    """I.i.d. Normal(mean, std) samples of the given shape.

    Samples are drawn in float64 and then cast, so the stream is identical
    for float32 and float64 consumers.
    """
    shape = _check_shape(shape)
    if not std >= 0:
        raise InvalidParameterError(f"std must be >= 0, got {std}")
    if std == 0:
        return np.full(shape, mean, dtype=dtype)
    return (mean + std * rng.standard_normal(shape)).astype(dtype)


def slice_channels(t: np.ndarray, lo: int, hi: int) -> np.ndarray:
    """Copy of channels ``[lo, hi)`` along the leading axis."""
    c = t.shape[0]
    if not 0 <= lo < hi <= c:
        raise IndexError(f"channel range [{lo}, {hi}) out of bounds for {c} channels")
    return t[lo:hi].copy()


def assign_channels(t: np.ndarray, lo: int, hi: int, block: np.ndarray) -> np.ndarray:
    """Return a copy of ``t`` with channels ``[lo, hi)`` replaced by ``block``."""
    c = t.shape[0]
    if not 0 <= lo < hi <= c:
        raise IndexError(f"channel range [{lo}, {hi}) out of bounds for {c} channels")
    if block.shape != (hi - lo,) + t.shape[1:]:
        raise ShapeError(f"block shape {block.shape} does not fit channels [{lo}, {hi}) of {t.shape}")
    out = t.copy()
    out[lo:hi] = block
    return out
