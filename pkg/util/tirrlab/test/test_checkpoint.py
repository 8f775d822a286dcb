# Copyright 2026 The tirrlab Authors.
# Licensed under the Apache License, Version 2.0, see LICENSE for details.
# SPDX-License-Identifier: Apache-2.0

import struct

import numpy as np
import pytest

from tirrlab.checkpoint import Checkpoint, sha256_file
from tirrlab.errors import TirrError, UnsupportedVersion


class OtherCheckpoint(Checkpoint):
    KIND = "other"


def _ckpt():
    return Checkpoint({"w": np.arange(6, dtype=np.float32).reshape(2, 3),
                       "b": np.array([1.5, -2.0]),
                       "ids": np.array([3, 4, 5], dtype=np.int64)},
                      {"seed": 3, "losses": [0.5, 0.25]})


def test_save_load(tmp_path):
    ckpt = _ckpt()
    path = tmp_path / "m.ckpt"
    digest = ckpt.save(path)
    assert digest == sha256_file(path) == ckpt.digest()
    back = Checkpoint.load(path)
    assert back == ckpt
    assert list(back.tensors) == ["w", "b", "ids"]
    assert back.tensors["w"].dtype == np.float32
    assert back.meta["losses"] == [0.5, 0.25]
    assert back.to_bytes() == ckpt.to_bytes()


def test_version_checked():
    data = bytearray(_ckpt().to_bytes())
    data[4:8] = struct.pack("<I", 2)
    with pytest.raises(UnsupportedVersion):
        Checkpoint.from_bytes(bytes(data))


def test_kind_checked():
    data = _ckpt().to_bytes()
    with pytest.raises(TirrError):
        OtherCheckpoint.from_bytes(data)
    with pytest.raises(TirrError):
        Checkpoint.from_bytes(b"JUNK" + data[4:])


def test_unsupported_dtype():
    with pytest.raises(TirrError):
        Checkpoint({"c": np.array([1 + 2j])}).to_bytes()
