"""Native binary container for meshes, snapshots, bases, and checkpoints.

Layout: 4-byte magic (``SRM`` + one version byte), a little-endian uint32
header length, a UTF-8 JSON header describing the arrays and free-form
metadata, then the raw array payloads in header order (C-contiguous,
little-endian).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"SRM"
VERSION = 1


class StorageError(RuntimeError):
    pass


def _le_dtype(a: np.ndarray) -> np.dtype:
    dt = a.dtype.newbyteorder("<")
    return dt


def save_bundle(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Write named arrays plus a JSON metadata blob to *path*."""
    path = Path(path)
    descr = []
    payloads = []
    for name, a in arrays.items():
        a = np.asarray(a)
        shape = list(a.shape)  # ascontiguousarray promotes 0-d to (1,)
        a = np.ascontiguousarray(a)
        dt = _le_dtype(a)
        descr.append({"name": name, "dtype": dt.str, "shape": shape})
        payloads.append(a.astype(dt, copy=False).tobytes())
    header = json.dumps({"arrays": descr, "meta": meta or {}}).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC + bytes([VERSION]))
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        for p in payloads:
            f.write(p)


def load_bundle(path) -> tuple[dict[str, np.ndarray], dict]:
    """Read back arrays and metadata written by :func:`save_bundle`."""
    path = Path(path)
    with open(path, "rb") as f:
        head = f.read(4)
        if len(head) != 4 or head[:3] != MAGIC:
            raise StorageError(f"{path}: not a softrom binary file")
        version = head[3]
        if version > VERSION:
            raise StorageError(f"{path}: unsupported format version {version}")
        (hlen,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(hlen).decode("utf-8"))
        arrays = {}
        for d in header["arrays"]:
            dt = np.dtype(d["dtype"])
            shape = tuple(d["shape"])
            n = int(np.prod(shape)) if shape else 1
            buf = f.read(n * dt.itemsize)
            if len(buf) != n * dt.itemsize:
                raise StorageError(f"{path}: truncated payload for array {d['name']!r}")
            arrays[d["name"]] = np.frombuffer(buf, dtype=dt).reshape(shape).copy()
    return arrays, header["meta"]
