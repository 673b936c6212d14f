"""Binary checkpoint files.

Layout (all integers little-endian u32 unless noted)::

    magic        4 bytes  b"LSCN"
    version      u32      1
    digest       32 bytes SHA-256 of the architecture spec
    count        u32      number of tensors
    per tensor:
      name_len   u32, then name_len bytes of UTF-8
      rank       u32, then rank dims (u32 each)
      dtype      u8       0 = float32
      data       prod(dims) * 4 bytes, little-endian float32

Besides the model parameters a checkpoint carries ``meta.iteration`` and
``meta.norm_mean`` and, optionally, Adam moments as ``adam.m.<name>``,
``adam.v.<name>`` and ``adam.t.<name>``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError
from .optim import AdamState

MAGIC = b"LSCN"
VERSION = 1
DTYPE_F32 = 0


@dataclass
class Checkpoint:
    digest: bytes
    iteration: int
    params: dict
    norm_mean: tuple = ()
    adam: dict = field(default_factory=dict)  # name -> AdamState

    def tensors(self):
        out = {name: np.asarray(t, dtype=np.float32) for name, t in self.params.items()}
        out["meta.iteration"] = np.array([self.iteration], dtype=np.float32)
        out["meta.norm_mean"] = np.asarray(self.norm_mean, dtype=np.float32).reshape(-1)
        for name, st in self.adam.items():
            out[f"adam.m.{name}"] = st.m.astype(np.float32)
            out[f"adam.v.{name}"] = st.v.astype(np.float32)
            out[f"adam.t.{name}"] = np.array([st.t], dtype=np.float32)
        return out


def save_checkpoint(ckpt: Checkpoint, path):
    if len(ckpt.digest) != 32:
        raise FormatError(f"digest must be 32 bytes, got {len(ckpt.digest)}")
    tensors = ckpt.tensors()
    parts = [MAGIC, struct.pack("<I", VERSION), ckpt.digest, struct.pack("<I", len(tensors))]
    for name, t in tensors.items():
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack(f"<I{t.ndim}I", t.ndim, *t.shape))
        parts.append(struct.pack("<B", DTYPE_F32))
        parts.append(np.ascontiguousarray(t, dtype="<f4").tobytes())
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(b"".join(parts))
    tmp.replace(path)
    return path


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated file while reading {what} at byte {self.pos}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]


def load_checkpoint(path, expected_digest=None) -> Checkpoint:
    """Read a checkpoint; ``expected_digest`` guards against the wrong architecture."""
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as e:
        raise FormatError(f"cannot read checkpoint {path}: {e}") from None
    r = _Reader(buf)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r} in {path}, expected {MAGIC!r}")
    version = r.u32("version")
    if version != VERSION:
        raise FormatError(f"unsupported version {version} in {path}")
    digest = r.take(32, "digest")
    if expected_digest is not None and digest != expected_digest:
        raise FormatError(
            f"digest mismatch in {path}: file {digest.hex()[:16]}..., expected {expected_digest.hex()[:16]}..."
        )
    count = r.u32("tensor count")
    tensors = {}
    for i in range(count):
        n = r.u32(f"name length of tensor {i}")
        try:
            name = r.take(n, f"name of tensor {i}").decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError(f"name of tensor {i} is not UTF-8") from None
        rank = r.u32(f"rank of {name}")
        dims = [r.u32(f"dim {d} of {name}") for d in range(rank)]
        dtype = r.take(1, f"dtype of {name}")[0]
        if dtype != DTYPE_F32:
            raise FormatError(f"dtype tag {dtype} of {name} is not supported")
        size = int(np.prod(dims, dtype=np.int64)) * 4
        data = r.take(size, f"data of {name}")
        tensors[name] = np.frombuffer(data, dtype="<f4").reshape(dims).astype(np.float32)
    if r.pos != len(buf):
        raise FormatError(f"{len(buf) - r.pos} trailing bytes after last tensor in {path}")
    return _from_tensors(digest, tensors)


def _from_tensors(digest, tensors):
    iteration = tensors.pop("meta.iteration", np.zeros(1))
    norm_mean = tensors.pop("meta.norm_mean", np.zeros(0))
    moments = {}
    params = {}
    for name, t in tensors.items():
        if name.startswith("adam."):
            kind, pname = name[5], name[7:]
            moments.setdefault(pname, {})[kind] = t
        else:
            params[name] = t
    adam = {}
    for pname, d in moments.items():
        if set(d) != {"m", "v", "t"}:
            raise FormatError(f"incomplete optimizer state for {pname}")
        adam[pname] = AdamState(d["m"], d["v"], int(d["t"][0]))
    return Checkpoint(digest, int(iteration[0]), params, tuple(float(v) for v in norm_mean), adam)
