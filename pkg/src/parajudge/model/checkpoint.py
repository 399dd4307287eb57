"""Base-model checkpoint persistence.

Layout (integers little-endian):

    magic b"PLCM" | u32 version=1
    | u32 json_len | config block: JSON {"config": {...}, "frozen": bool}
    | u32 n_tensors | per tensor (sorted by name):
        u16 name_len, name bytes (UTF-8), u8 ndim, u32 dims...
    | raw little-endian float32 data, row-major, concatenated in table order
    | u64 trailing checksum (BLAKE2b-8 of every preceding byte)

Round-trips are bit-exact; any corrupted payload byte fails the checksum.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from ..errors import ChecksumFailure, FormatError, VersionMismatch
from .config import ModelConfig
from .transformer import BaseModel

_MAGIC = b"PLCM"
_VERSION = 1


def _digest64(data: bytes) -> int:
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "little")


def save_checkpoint(base: BaseModel, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = bytearray()
    buf += _MAGIC
    buf += struct.pack("<I", _VERSION)
    header = json.dumps({"config": base.config.to_dict(), "frozen": base.frozen}).encode("utf-8")
    buf += struct.pack("<I", len(header)) + header
    names = sorted(base.params)
    buf += struct.pack("<I", len(names))
    for name in names:
        raw = name.encode("utf-8")
        arr = base.params[name]
        buf += struct.pack("<H", len(raw)) + raw
        buf += struct.pack("<B", arr.ndim)
        for dim in arr.shape:
            buf += struct.pack("<I", dim)
    for name in names:
        buf += base.params[name].astype("<f4").tobytes(order="C")
    buf += struct.pack("<Q", _digest64(bytes(buf)))
    path.write_bytes(bytes(buf))
    return path


def load_checkpoint(path: str | Path) -> BaseModel:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 16 or data[:4] != _MAGIC:
        raise FormatError("bad checkpoint magic", path=str(path))
    (stored_sum,) = struct.unpack_from("<Q", data, len(data) - 8)
    if _digest64(data[:-8]) != stored_sum:
        raise ChecksumFailure(f"checkpoint {path} failed its integrity check")
    pos = 4
    (version,) = struct.unpack_from("<I", data, pos)
    pos += 4
    if version != _VERSION:
        raise VersionMismatch(f"unsupported checkpoint version {version}")
    (json_len,) = struct.unpack_from("<I", data, pos)
    pos += 4
    header = json.loads(data[pos : pos + json_len].decode("utf-8"))
    pos += json_len
    config = ModelConfig.from_dict(header["config"])
    (n_tensors,) = struct.unpack_from("<I", data, pos)
    pos += 4
    shapes: list[tuple[str, tuple[int, ...]]] = []
    for _ in range(n_tensors):
        (name_len,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos : pos + name_len].decode("utf-8")
        pos += name_len
        (ndim,) = struct.unpack_from("<B", data, pos)
        pos += 1
        dims = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        shapes.append((name, tuple(dims)))
    params: dict[str, np.ndarray] = {}
    for name, shape in shapes:
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=pos).reshape(shape)
        params[name] = arr.copy()
        pos += 4 * count
    if pos != len(data) - 8:
        raise FormatError("checkpoint payload length mismatch", path=str(path))
    return BaseModel(config, params, frozen=bool(header["frozen"]))
