"""Binary checkpoint container.

Layout::

    b"LATRISK\\0"                 8 bytes magic
    header length                 8 bytes, little-endian unsigned
    header                        UTF-8 JSON: format_version, seed, manifest, meta
    payload                       little-endian float64 arrays, concatenated

Each manifest entry is ``{"name", "shape", "offset"}`` with ``offset`` counted
in bytes from the start of the payload.
"""

from __future__ import annotations

import json
import os
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"LATRISK\x00"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


class IncompatibleCheckpoint(CheckpointError):
    pass


def save_checkpoint(
    path: str | os.PathLike,
    arrays: Mapping[str, np.ndarray],
    seed: int,
    meta: dict | None = None,
) -> None:
    manifest = []
    chunks = []
    offset = 0
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr, dtype="<f8")
        manifest.append({"name": name, "shape": list(a.shape), "offset": offset})
        b = a.tobytes()
        chunks.append(b)
        offset += len(b)
    header = {
        "format_version": FORMAT_VERSION,
        "seed": int(seed),
        "manifest": manifest,
        "meta": meta or {},
    }
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(hb)))
        fh.write(hb)
        for b in chunks:
            fh.write(b)
    os.replace(tmp, path)


def load_checkpoint(path: str | os.PathLike) -> tuple["OrderedDict[str, np.ndarray]", dict]:
    """Return ``(arrays, header)``; raises :class:`IncompatibleCheckpoint` on version mismatch."""
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16 : 16 + hlen].decode("utf-8"))
    if header.get("format_version") != FORMAT_VERSION:
        raise IncompatibleCheckpoint(
            f"{path}: format_version {header.get('format_version')} != supported {FORMAT_VERSION}"
        )
    payload = memoryview(raw)[16 + hlen :]
    arrays: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for entry in header["manifest"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        start = entry["offset"]
        buf = payload[start : start + 8 * n]
        arrays[entry["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).astype(np.float64)
    return arrays, header
