"""Self-describing binary container for named arrays.

Layout::

    8 bytes   magic  b"MOODRDR\\x00"
    4 bytes   format version, uint32 little-endian
    8 bytes   header length H, uint64 little-endian
    H bytes   UTF-8 JSON header: {"meta": {...}, "arrays": [{name, dtype, shape, offset, nbytes}]}
    ...       raw little-endian array bytes, offsets relative to the end of the header

Used for model checkpoints, pretrained encoders and DE feature files.
"""
from __future__ import annotations

import json
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

MAGIC = b"MOODRDR\x00"
VERSION = 1
_ALLOWED = {"<f8", "<f4", "<i8", "<i4", "|u1", "|b1"}


class CheckpointError(IOError):
    """Container missing, truncated, or not in the expected format."""


def save(path, arrays: dict, meta: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries = []
    blobs = []
    offset = 0
    for name, value in arrays.items():
        arr = np.asarray(value)
        le = arr.dtype.newbyteorder("<") if arr.dtype.byteorder not in "|" else arr.dtype
        arr = np.ascontiguousarray(arr, dtype=le)
        if arr.dtype.str not in _ALLOWED:
            raise CheckpointError(f"{name}: unsupported dtype {arr.dtype}")
        raw = arr.tobytes()
        entries.append(
            {"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)}
        )
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": meta or {}, "arrays": entries}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for raw in blobs:
            fh.write(raw)
    return path


def load(path) -> tuple["OrderedDict[str, np.ndarray]", dict]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    blob = path.read_bytes()
    if blob[:8] != MAGIC:
        raise CheckpointError(f"{path}: bad magic header")
    (version,) = struct.unpack("<I", blob[8:12])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    (hlen,) = struct.unpack("<Q", blob[12:20])
    try:
        header = json.loads(blob[20 : 20 + hlen].decode("utf-8"))
    except ValueError as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc
    base = 20 + hlen
    arrays = OrderedDict()
    for e in header["arrays"]:
        start = base + e["offset"]
        raw = blob[start : start + e["nbytes"]]
        if len(raw) != e["nbytes"]:
            raise CheckpointError(f"{path}: truncated data for {e['name']}")
        arrays[e["name"]] = np.frombuffer(raw, dtype=np.dtype(e["dtype"])).reshape(e["shape"]).copy()
    return arrays, header["meta"]
