"""Binary checkpoint format for named parameter arrays.

Layout (little-endian): magic ``MTLW``, version u32, then one record per
entry: name length u32, utf-8 name, ndim u32, each dimension u32, and the
float64 values row-major.  Records run to end of file.  Round-trips are
bit-exact for float64 arrays.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError

MAGIC = b"MTLW"
VERSION = 1


def save_params(path, entries):
    """Write (name, array) pairs; arrays are stored as float64."""
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        for name, value in entries:
            raw = name.encode("utf-8")
            arr = np.ascontiguousarray(value, dtype="<f8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            for d in arr.shape:
                fh.write(struct.pack("<I", d))
            fh.write(arr.tobytes())


def load_params(path) -> dict[str, np.ndarray]:
    """Read a checkpoint back into an ordered name -> float64 array mapping."""
    path = Path(path)
    data = path.read_bytes()
    if data[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {data[:4]!r}")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    out: dict[str, np.ndarray] = {}
    off = 8
    end = len(data)
    while off < end:
        try:
            (nlen,) = struct.unpack_from("<I", data, off)
            off += 4
            name = data[off:off + nlen].decode("utf-8")
            off += nlen
            (ndim,) = struct.unpack_from("<I", data, off)
            off += 4
            shape = struct.unpack_from(f"<{ndim}I", data, off)
            off += 4 * ndim
            count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
            nbytes = 8 * count
            if off + nbytes > end:
                raise struct.error("truncated values")
            values = np.frombuffer(data, dtype="<f8", count=count, offset=off)
            off += nbytes
        except (struct.error, UnicodeDecodeError) as exc:
            raise FormatError(f"{path}: truncated or corrupt record: {exc}") from exc
        out[name] = values.reshape(shape).copy()
    return out
