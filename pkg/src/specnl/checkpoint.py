"""SNL1 binary checkpoint format.

Layout (all integers little-endian):

  magic   4 bytes  b"SNL1"
  version u32      currently 1
  count   u32      number of entries
  entry:  name_len u16, name bytes (utf-8), dtype u8 (0=f64, 1=f32),
          rank u8, dims u32 * rank, payload (row-major, little-endian)

Entries are written in sorted name order; load(save(x)) is bit-identical.
"""

from __future__ import annotations

import io
import struct

import numpy as np

from .fileio import atomic_write_bytes

MAGIC = b"SNL1"
VERSION = 1

_DTYPE_CODES = {np.dtype("<f8"): 0, np.dtype("<f4"): 1}
_CODE_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<f4")}
_MAX_RANK = 4


class CheckpointFormatError(ValueError):
    """Checkpoint bytes do not follow the SNL1 layout."""


def serialize(arrays: dict[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(arrays)))
    for name in sorted(arrays):
        arr = np.asarray(arrays[name])
        if arr.ndim < 1 or arr.ndim > _MAX_RANK:
            raise CheckpointFormatError(
                f"entry {name!r} has rank {arr.ndim}; supported ranks are 1..{_MAX_RANK}"
            )
        arr = np.ascontiguousarray(arr)
        dt = arr.dtype.newbyteorder("<")
        if dt not in _DTYPE_CODES:
            raise CheckpointFormatError(
                f"entry {name!r} has dtype {arr.dtype}; only f64 and f32 are storable"
            )
        nm = name.encode("utf-8")
        if len(nm) > 0xFFFF:
            raise CheckpointFormatError(f"entry name too long: {len(nm)} bytes")
        buf.write(struct.pack("<H", len(nm)))
        buf.write(nm)
        buf.write(struct.pack("<BB", _DTYPE_CODES[dt], arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.astype(dt, copy=False).tobytes())
    return buf.getvalue()


def deserialize(blob: bytes) -> dict[str, np.ndarray]:
    view = memoryview(blob)
    if len(view) < 12 or bytes(view[:4]) != MAGIC:
        raise CheckpointFormatError("not an SNL1 checkpoint (bad magic)")
    version, count = struct.unpack_from("<II", view, 4)
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    off = 12
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", view, off)
            off += 2
            name = bytes(view[off:off + name_len]).decode("utf-8")
            off += name_len
            code, rank = struct.unpack_from("<BB", view, off)
            off += 2
            if code not in _CODE_DTYPES:
                raise CheckpointFormatError(f"entry {name!r}: unknown dtype code {code}")
            if rank < 1 or rank > _MAX_RANK:
                raise CheckpointFormatError(f"entry {name!r}: bad rank {rank}")
            dims = struct.unpack_from(f"<{rank}I", view, off)
            off += 4 * rank
            dt = _CODE_DTYPES[code]
            nbytes = int(np.prod(dims)) * dt.itemsize
            payload = view[off:off + nbytes]
            if len(payload) != nbytes:
                raise CheckpointFormatError(f"entry {name!r}: truncated payload")
            off += nbytes
            out[name] = np.frombuffer(payload, dtype=dt).reshape(dims).copy()
    except struct.error as e:
        raise CheckpointFormatError(f"truncated checkpoint: {e}") from e
    if off != len(view):
        raise CheckpointFormatError(f"{len(view) - off} trailing bytes after last entry")
    return out


def save_checkpoint(path: str, arrays: dict[str, np.ndarray]) -> None:
    atomic_write_bytes(path, serialize(arrays))


def load_checkpoint(path: str) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return deserialize(fh.read())
