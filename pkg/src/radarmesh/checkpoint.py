"""Checkpoint persistence: a JSON manifest plus one raw float32 blob.

A checkpoint is a directory holding ``manifest.json`` (name -> shape, dtype,
byte offset, plus free-form ``extra`` metadata) and ``params.f32``, the
little-endian float32 concatenation of all arrays in manifest order. Writes
go through temp files and ``os.replace`` so readers never observe a torn
checkpoint. Round-trips are bitwise exact.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

MAGIC = "radarmesh.checkpoint"
VERSION = 1
MANIFEST_NAME = "manifest.json"
BLOB_NAME = "params.f32"


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(path, arrays: dict[str, np.ndarray], extra: dict | None = None) -> Path:
    """Write ``arrays`` (all float32) and JSON-serializable ``extra`` to ``path``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = {}
    offset = 0
    chunks = []
    for name in sorted(arrays):
        arr = arrays[name]
        if arr.dtype != np.float32:
            raise CheckpointError(f"checkpoint arrays must be float32, '{name}' is {arr.dtype}")
        raw = np.ascontiguousarray(arr).astype("<f4", copy=False).tobytes()
        entries[name] = {"shape": list(arr.shape), "dtype": "<f4", "offset": offset}
        offset += len(raw)
        chunks.append(raw)

    manifest = {"magic": MAGIC, "version": VERSION, "blob_bytes": offset,
                "entries": entries, "extra": extra or {}}

    blob_tmp = path / (BLOB_NAME + ".tmp")
    blob_tmp.write_bytes(b"".join(chunks))
    os.replace(blob_tmp, path / BLOB_NAME)
    man_tmp = path / (MANIFEST_NAME + ".tmp")
    man_tmp.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    os.replace(man_tmp, path / MANIFEST_NAME)
    return path


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a checkpoint directory back into (arrays, extra)."""
    path = Path(path)
    man_path = path / MANIFEST_NAME
    if not man_path.exists():
        raise CheckpointError(f"no checkpoint manifest at {man_path}")
    manifest = json.loads(man_path.read_text())
    if manifest.get("magic") != MAGIC:
        raise CheckpointError(f"bad checkpoint magic in {man_path}")
    if manifest.get("version") != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {manifest.get('version')}")
    blob = (path / BLOB_NAME).read_bytes()
    if len(blob) != manifest["blob_bytes"]:
        raise CheckpointError(
            f"blob length {len(blob)} != manifest blob_bytes {manifest['blob_bytes']} (truncated?)")
    arrays = {}
    for name, entry in manifest["entries"].items():
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=start)
        arrays[name] = arr.reshape(shape).copy()
    return arrays, manifest.get("extra", {})
