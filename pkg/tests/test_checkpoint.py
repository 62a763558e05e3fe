import struct

import numpy as np
import pytest
import torch

from mmcount.checkpoint import (ModelCheckpoint, load_checkpoint, load_numpy_state,
                                save_checkpoint, state_to_numpy)
from mmcount.errors import FormatError


def _ckpt(rng):
    return ModelCheckpoint(kind="mmcount", config={"a": 1, "b": [1, 2]},
                           tensors={"m.w": rng.normal(size=(3, 4)).astype(np.float32),
                                    "m.b": rng.normal(size=(4,)).astype(np.float32)},
                           seed=7, epoch=12, history=[{"epoch": 1, "x": 0.5}], meta={"sigma": 2.0})


def test_roundtrip(tmp_path, rng):
    ck = _ckpt(rng)
    save_checkpoint(ck, tmp_path / "c.ckpt")
    back = load_checkpoint(tmp_path / "c.ckpt")
    assert (back.kind, back.config, back.seed, back.epoch) == ("mmcount", ck.config, 7, 12)
    assert back.history == ck.history and back.meta == ck.meta
    for k, v in ck.tensors.items():
        assert back.tensors[k].tobytes() == v.tobytes()


def test_layout_prefix(tmp_path, rng):
    save_checkpoint(_ckpt(rng), tmp_path / "c.ckpt")
    raw = (tmp_path / "c.ckpt").read_bytes()
    magic, version, hlen = struct.unpack_from("<4sIQ", raw)
    assert magic == b"MMCK" and version == 1
    assert len(raw) == 16 + hlen + (12 + 4) * 4


def test_bad_files(tmp_path, rng):
    (tmp_path / "short").write_bytes(b"MM")
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "short")
    save_checkpoint(_ckpt(rng), tmp_path / "c.ckpt")
    raw = bytearray((tmp_path / "c.ckpt").read_bytes())
    (tmp_path / "magic").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "magic")
    (tmp_path / "trunc").write_bytes(raw[:-8])
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "trunc")


def test_module_state_roundtrip():
    torch.manual_seed(0)
    a = torch.nn.Sequential(torch.nn.Conv2d(2, 3, 3), torch.nn.Conv2d(3, 1, 1))
    b = torch.nn.Sequential(torch.nn.Conv2d(2, 3, 3), torch.nn.Conv2d(3, 1, 1))
    ck = ModelCheckpoint("x", {}, state_to_numpy(a, "net"))
    load_numpy_state(b, ck.subset("net"))
    x = torch.rand(1, 2, 6, 6)
    assert torch.equal(a(x), b(x))


def test_header_missing_fields(tmp_path):
    head = b'{"kind": "mmcount"}'
    (tmp_path / "h.ckpt").write_bytes(struct.pack("<4sIQ", b"MMCK", 1, len(head)) + head)
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "h.ckpt")
