# Copyright 2026 The tirrlab Authors.
# Licensed under the Apache License, Version 2.0, see LICENSE for details.
# SPDX-License-Identifier: Apache-2.0
#
# Versioned weight container shared by every trainable model.
#
# Layout:
#   4 bytes   magic "TRCK"
#   4 bytes   container version, little-endian uint32
#   8 bytes   header length N, little-endian uint64
#   N bytes   JSON header (sorted keys, compact separators)
#   rest      raw little-endian tensor bytes, in header order

import hashlib
import json
import logging as log
import struct
from collections import OrderedDict

import numpy as np

from .errors import IoFailure, TirrError, UnsupportedVersion

MAGIC = b"TRCK"
VERSION = 1

_DTYPES = {
    "f4": np.dtype("<f4"),
    "f8": np.dtype("<f8"),
    "i8": np.dtype("<i8"),
}


def _dtype_tag(arr):
    for tag, dtype in _DTYPES.items():
        if arr.dtype.kind == dtype.kind and arr.dtype.itemsize == dtype.itemsize:
            return tag
    raise TirrError("Unsupported tensor dtype {}".format(arr.dtype))


def sha256_bytes(data):
    return hashlib.sha256(data).hexdigest()


def sha256_file(path):
    with open(path, "rb") as f:
        return sha256_bytes(f.read())


class Checkpoint(object):
    """
    Named flat weight arrays plus training metadata.

    Subclasses set `KIND`; loading a container of another kind fails.
    """
    KIND = "generic"

    def __init__(self, tensors, meta=None):
        self.tensors = OrderedDict(
            (name, np.ascontiguousarray(arr)) for name, arr in tensors.items())
        self.meta = dict(meta or {})

    def __eq__(self, other):
        if not isinstance(other, Checkpoint):
            return NotImplemented
        return self.to_bytes() == other.to_bytes()

    def __hash__(self):
        return hash(self.digest())

    def to_bytes(self):
        entries = list()
        payload = bytearray()
        for name, arr in self.tensors.items():
            tag = _dtype_tag(arr)
            raw = arr.astype(_DTYPES[tag], copy=False).tobytes()
            entries.append({
                "name": name,
                "dtype": tag,
                "shape": list(arr.shape),
                "offset": len(payload),
                "nbytes": len(raw),
            })
            payload += raw
        header = json.dumps({
            "kind": self.KIND,
            "meta": self.meta,
            "tensors": entries,
        }, sort_keys=True, separators=(",", ":")).encode("utf-8")
        return (MAGIC + struct.pack("<I", VERSION) +
                struct.pack("<Q", len(header)) + header + bytes(payload))

    @classmethod
    def from_bytes(cls, data, origin="<bytes>"):
        if data[:4] != MAGIC:
            raise TirrError("{} is not a checkpoint container".format(origin))
        (version, ) = struct.unpack("<I", data[4:8])
        if version != VERSION:
            raise UnsupportedVersion(
                "{} has container version {}, expected {}".format(
                    origin, version, VERSION))
        (hlen, ) = struct.unpack("<Q", data[8:16])
        header = json.loads(data[16:16 + hlen].decode("utf-8"))
        if header["kind"] != cls.KIND:
            raise TirrError("{} holds a {!r} checkpoint, expected {!r}".format(
                origin, header["kind"], cls.KIND))
        payload = data[16 + hlen:]
        tensors = OrderedDict()
        for entry in header["tensors"]:
            raw = payload[entry["offset"]:entry["offset"] + entry["nbytes"]]
            arr = np.frombuffer(raw, dtype=_DTYPES[entry["dtype"]])
            tensors[entry["name"]] = arr.reshape(entry["shape"]).copy()
        return cls(tensors, header["meta"])

    def digest(self):
        return sha256_bytes(self.to_bytes())

    def save(self, path):
        """Write the container and return its digest."""
        data = self.to_bytes()
        try:
            with open(path, "wb") as f:
                f.write(data)
        except OSError as e:
            raise IoFailure("Unable to write checkpoint {}: {}".format(path, e))
        log.debug("Wrote %s checkpoint %s", self.KIND, path)
        return sha256_bytes(data)

    @classmethod
    def load(cls, path):
        try:
            with open(path, "rb") as f:
                data = f.read()
        except OSError as e:
            raise IoFailure("Unable to read checkpoint {}: {}".format(path, e))
        return cls.from_bytes(data, origin=str(path))
