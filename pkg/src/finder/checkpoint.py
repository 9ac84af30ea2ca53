"""Binary checkpoint container.

Byte layout (all integers little-endian)::

    magic        8 bytes   b"FNDRCKPT"
    version      uint32    currently 1
    manifest_len uint32
    manifest     manifest_len bytes, UTF-8 JSON object
    n_arrays     uint32
    n_arrays times:
        name_len uint16
        name     name_len bytes, UTF-8
        dtype    uint8     0 = float32, 1 = float64, 2 = int64
        ndim     uint8
        dims     ndim x uint32
        data     prod(dims) * itemsize bytes, little-endian, C order
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"FNDRCKPT"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
_CODES = {np.dtype(v).newbyteorder("=").str: k for k, v in _DTYPES.items()}


class CheckpointError(ValueError):
    pass


def _code(dtype) -> int:
    key = np.dtype(dtype).newbyteorder("=").str
    if key not in _CODES:
        raise CheckpointError(f"unsupported dtype {dtype}")
    return _CODES[key]


def save_checkpoint(path, arrays: dict[str, np.ndarray], manifest: dict) -> None:
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(blob)), blob, struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        code = _code(arr.dtype)
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<BB", code, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.astype(_DTYPES[code], copy=False).tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    buf = Path(path).read_bytes()
    if buf[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, mlen = struct.unpack_from("<II", buf, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    pos = 16
    manifest = json.loads(buf[pos:pos + mlen].decode("utf-8"))
    pos += mlen
    (count,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        name = buf[pos:pos + nlen].decode("utf-8")
        pos += nlen
        code, ndim = struct.unpack_from("<BB", buf, pos)
        pos += 2
        shape = struct.unpack_from(f"<{ndim}I", buf, pos)
        pos += 4 * ndim
        dtype = _DTYPES[code]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        arrays[name] = np.frombuffer(buf, dtype=dtype, count=nbytes // dtype.itemsize,
                                     offset=pos).reshape(shape).astype(dtype.newbyteorder("="))
        pos += nbytes
    return arrays, manifest
