import struct

import numpy as np
import pytest

from lscnn import arch
from lscnn.checkpoint import MAGIC, Checkpoint, load_checkpoint, save_checkpoint
from lscnn.errors import FormatError
from lscnn.optim import Adam
from lscnn.tensor import make_rng


@pytest.fixture
def ckpt():
    spec = arch.build_patchnet()
    params = arch.init_params(spec, 0.01, make_rng(0))
    grads = {k: np.ones_like(v) for k, v in params.items()}
    adam = Adam()
    adam.step(params, grads)
    return spec, Checkpoint(spec.digest(), 123, params, (101.5, 99.0, 87.25), dict(adam.states))


def test_round_trip(tmp_path, ckpt):
    spec, c = ckpt
    path = save_checkpoint(c, tmp_path / "a.ckpt")
    back = load_checkpoint(path, spec.digest())
    assert back.digest == c.digest and back.iteration == 123 and back.norm_mean == c.norm_mean
    assert back.params.keys() == c.params.keys()
    for k in c.params:
        assert back.params[k].dtype == np.float32
        assert np.array_equal(back.params[k], c.params[k])
    for k, st in c.adam.items():
        assert np.array_equal(back.adam[k].m, st.m) and back.adam[k].t == st.t == 1
    arch.check_params(spec, back.params)
    assert not list(tmp_path.glob("*.tmp"))


def test_header_layout(tmp_path, ckpt):
    _, c = ckpt
    raw = save_checkpoint(c, tmp_path / "a.ckpt").read_bytes()
    assert raw[:4] == MAGIC
    assert struct.unpack("<I", raw[4:8])[0] == 1
    assert raw[8:40] == c.digest
    n = struct.unpack("<I", raw[40:44])[0]
    assert n == len(c.tensors())
    name_len = struct.unpack("<I", raw[44:48])[0]
    first = raw[48:48 + name_len].decode()
    assert first == next(iter(c.params))


def test_bad_magic(tmp_path, ckpt):
    p = save_checkpoint(ckpt[1], tmp_path / "a.ckpt")
    p.write_bytes(b"XXXX" + p.read_bytes()[4:])
    with pytest.raises(FormatError, match="magic"):
        load_checkpoint(p)


def test_bad_version(tmp_path, ckpt):
    p = save_checkpoint(ckpt[1], tmp_path / "a.ckpt")
    raw = p.read_bytes()
    p.write_bytes(raw[:4] + struct.pack("<I", 7) + raw[8:])
    with pytest.raises(FormatError, match="version"):
        load_checkpoint(p)


@pytest.mark.parametrize("cut", [2, 20, 60, 500, -3])
def test_truncated(tmp_path, ckpt, cut):
    p = save_checkpoint(ckpt[1], tmp_path / "a.ckpt")
    raw = p.read_bytes()
    p.write_bytes(raw[:cut])
    with pytest.raises(FormatError, match="truncated"):
        load_checkpoint(p)


def test_trailing_bytes(tmp_path, ckpt):
    p = save_checkpoint(ckpt[1], tmp_path / "a.ckpt")
    p.write_bytes(p.read_bytes() + b"\0")
    with pytest.raises(FormatError, match="trailing"):
        load_checkpoint(p)


def test_digest_mismatch(tmp_path, ckpt):
    p = save_checkpoint(ckpt[1], tmp_path / "a.ckpt")
    with pytest.raises(FormatError, match="digest"):
        load_checkpoint(p, arch.build_lscnn().digest())


def test_missing_file(tmp_path):
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "nope.ckpt")
