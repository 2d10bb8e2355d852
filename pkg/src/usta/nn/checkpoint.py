"""USTAW1 parameter checkpoints.

Layout: the 6-byte magic ``USTAW1`` followed by one record per named array
until end of file.  A record is ``name_len:u32``, UTF-8 name bytes,
``rank:u32``, ``rank`` dims as ``u32``, then the values as little-endian
float64 in row-major order.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"USTAW1"


class CheckpointError(ValueError):
    pass


def save(arrays, path):
    """Write ``(name, ndarray)`` pairs in the given order."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        for name, arr in arrays:
            arr = np.asarray(arr, dtype="<f8")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr).tobytes())


def load(path):
    """Return the records as a list of ``(name, ndarray)`` in file order."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:6] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {buf[:6]!r}")
    pos, out = 6, []

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise CheckpointError(f"{path}: truncated record at byte {pos}")
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    while pos < len(buf):
        (nlen,) = struct.unpack("<I", take(4))
        name = take(nlen).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        count = int(np.prod(dims)) if rank else 1
        values = np.frombuffer(take(8 * count), dtype="<f8").reshape(dims).astype(np.float64)
        out.append((name, values))
    return out


def restore(named_arrays, path):
    """Copy checkpoint values into ``named_arrays`` (a name -> ndarray mapping) in place.

    The checkpoint must carry exactly the same names and shapes.
    """
    records = load(path)
    names = [n for n, _ in records]
    if sorted(names) != sorted(named_arrays):
        extra = set(names) - set(named_arrays)
        missing = set(named_arrays) - set(names)
        raise CheckpointError(f"{path}: name mismatch (unexpected {sorted(extra)[:3]}, missing {sorted(missing)[:3]})")
    for name, values in records:
        target = named_arrays[name]
        if target.shape != values.shape:
            raise CheckpointError(f"{path}: {name} has shape {values.shape}, expected {target.shape}")
    for name, values in records:
        named_arrays[name][...] = values
