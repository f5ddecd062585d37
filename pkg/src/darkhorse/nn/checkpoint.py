"""Binary parameter checkpoints.

Layout, little-endian::

    magic b"DHCK", uint32 version (=1), uint32 n_params
    per parameter:
        uint32 layer_index
        uint16 name_length, utf-8 name
        uint8 ndim, uint32[ndim] shape
        float64[prod(shape)] values, row-major

Values are stored as raw IEEE doubles, so save/load is bit-exact.
"""
from __future__ import annotations

import struct

import numpy as np

_MAGIC = b"DHCK"
_HEAD = struct.Struct("<4sII")


class CheckpointError(ValueError):
    pass


def save_params(entries, path):
    """``entries``: iterable of ``(layer_index, name, ndarray)``."""
    entries = list(entries)
    with open(path, "wb") as fh:
        fh.write(_HEAD.pack(_MAGIC, 1, len(entries)))
        for layer_index, name, value in entries:
            raw = name.encode("utf-8")
            # np.ascontiguousarray would promote 0-d values to shape (1,)
            value = np.array(value, dtype="<f8", order="C")
            fh.write(struct.pack("<IH", layer_index, len(raw)))
            fh.write(raw)
            fh.write(struct.pack(f"<B{value.ndim}I", value.ndim, *value.shape))
            fh.write(value.tobytes())


def load_params(path):
    """Return a list of ``(layer_index, name, ndarray)``; raises CheckpointError on bad data."""
    with open(path, "rb") as fh:
        data = fh.read()
    try:
        magic, version, count = _HEAD.unpack_from(data, 0)
        if magic != _MAGIC:
            raise CheckpointError(f"{path}: bad magic {magic!r}")
        if version != 1:
            raise CheckpointError(f"{path}: unsupported version {version}")
        offset = _HEAD.size
        out = []
        for _ in range(count):
            layer_index, name_len = struct.unpack_from("<IH", data, offset)
            offset += 6
            if offset + name_len > len(data):
                raise CheckpointError(f"{path}: truncated parameter name")
            name = data[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (ndim,) = struct.unpack_from("<B", data, offset)
            offset += 1
            shape = struct.unpack_from(f"<{ndim}I", data, offset)
            offset += 4 * ndim
            size = int(np.prod(shape, dtype=np.int64))
            if offset + 8 * size > len(data):
                raise CheckpointError(f"{path}: truncated data for {name!r}")
            value = np.frombuffer(data, dtype="<f8", count=size, offset=offset).reshape(shape).astype(np.float64)
            offset += 8 * size
            out.append((layer_index, name, value))
    except (struct.error, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: cannot decode checkpoint ({exc})") from None
    if offset != len(data):
        raise CheckpointError(f"{path}: {len(data) - offset} trailing bytes")
    return out
