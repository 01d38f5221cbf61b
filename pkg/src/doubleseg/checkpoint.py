"""Named-tensor checkpoint file.

Binary layout, all integers little-endian:

    offset  size  field
    0       6     magic ``b"NTCKPT"``
    6       4     format version, uint32 (currently 1)
    10      4     config length L, uint32
    14      L     config, UTF-8 JSON (canonical: sorted keys, no spaces)
    ..      4     entry count, uint32
    then per entry:
            2     name length, uint16
            -     name, UTF-8
            1     dtype tag, uint8 (0 = float32, 1 = float64)
            1     rank, uint8
            4*r   dims, uint32 each
            -     payload, little-endian raw values, C order

Writing the same arrays and config twice produces byte-identical files.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"NTCKPT"
VERSION = 1
_DTYPE_TAGS = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_TAG_FOR = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, arrays: dict, config: dict | None = None):
    """Write ``{name: ndarray}`` plus an optional JSON-able config header."""
    cfg_bytes = json.dumps(config or {}, sort_keys=True,
                           separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<I", len(cfg_bytes)))
        f.write(cfg_bytes)
        f.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            arr = np.asarray(arr)
            if arr.dtype not in _TAG_FOR:
                raise CheckpointError(f"unsupported dtype {arr.dtype} for '{name}'")
            name_b = name.encode("utf-8")
            f.write(struct.pack("<H", len(name_b)))
            f.write(name_b)
            f.write(struct.pack("<BB", _TAG_FOR[arr.dtype], arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(np.ascontiguousarray(arr, dtype=_DTYPE_TAGS[_TAG_FOR[arr.dtype]])
                    .tobytes())


def load_checkpoint(path):
    """Read a checkpoint; returns ``(config, {name: ndarray})``."""
    data = Path(path).read_bytes()
    if data[:6] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {data[:6]!r}")
    pos = 6
    (version,) = struct.unpack_from("<I", data, pos)
    pos += 4
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    (cfg_len,) = struct.unpack_from("<I", data, pos)
    pos += 4
    config = json.loads(data[pos:pos + cfg_len].decode("utf-8"))
    pos += cfg_len
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    arrays = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos:pos + name_len].decode("utf-8")
        pos += name_len
        tag, rank = struct.unpack_from("<BB", data, pos)
        pos += 2
        dims = struct.unpack_from(f"<{rank}I", data, pos)
        pos += 4 * rank
        dtype = _DTYPE_TAGS[tag]
        nbytes = int(np.prod(dims)) * dtype.itemsize
        arrays[name] = np.frombuffer(data[pos:pos + nbytes],
                                     dtype=dtype).reshape(dims).copy()
        pos += nbytes
    return config, arrays
