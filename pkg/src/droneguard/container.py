"""Versioned binary container for model files.

Layout: 4-byte magic, u16 version, u32 header length, UTF-8 JSON header,
then the arrays listed in the header as little-endian float64 blobs in
header order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

_PREFIX = struct.Struct("<4sHI")


class ContainerError(ValueError):
    pass


def write_container(path, magic: bytes, version: int, header: dict, arrays: dict[str, np.ndarray]) -> None:
    layout = [[name, list(np.shape(arr))] for name, arr in arrays.items()]
    meta = json.dumps({"header": header, "arrays": layout}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(magic, version, len(meta)))
        fh.write(meta)
        for arr in arrays.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def peek_magic(path) -> bytes:
    with open(path, "rb") as fh:
        return fh.read(4)


def read_container(path, magic: bytes, versions=(1,)) -> tuple[int, dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if len(data) < _PREFIX.size:
        raise ContainerError(f"{path}: truncated container")
    found, version, hlen = _PREFIX.unpack_from(data)
    if found != magic:
        raise ContainerError(f"{path}: expected magic {magic!r}, found {found!r}")
    if version not in versions:
        raise ContainerError(f"{path}: unsupported version {version}")
    meta = json.loads(data[_PREFIX.size:_PREFIX.size + hlen])
    offset = _PREFIX.size + hlen
    arrays = {}
    for name, shape in meta["arrays"]:
        count = int(np.prod(shape)) if shape else 1
        if offset + 8 * count > len(data):
            raise ContainerError(f"{path}: array {name!r} runs past end of file")
        arrays[name] = np.frombuffer(data, "<f8", count, offset).reshape(shape).copy()
        offset += 8 * count
    return version, meta["header"], arrays
