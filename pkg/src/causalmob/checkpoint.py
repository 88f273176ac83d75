"""Checkpoint format: JSON manifest + one flat little-endian float32 blob.

The manifest maps each parameter name to its shape, dtype and byte span
inside ``params.bin``. Loading validates that the spans tile the file
exactly.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

MANIFEST_NAME = "manifest.json"
BLOB_NAME = "params.bin"


class CheckpointError(RuntimeError):
    pass


def save_params(dirpath, params):
    """Write every parameter as little-endian float32, in registry order."""
    dirpath = Path(dirpath)
    dirpath.mkdir(parents=True, exist_ok=True)
    entries = {}
    offset = 0
    chunks = []
    for name, t in params.items():
        flat = np.ascontiguousarray(t.data, dtype="<f4")
        raw = flat.tobytes()
        entries[name] = {
            "shape": list(t.data.shape),
            "dtype": "float32",
            "byte_offset": offset,
            "byte_length": len(raw),
        }
        chunks.append(raw)
        offset += len(raw)
    (dirpath / BLOB_NAME).write_bytes(b"".join(chunks))
    manifest = {"total_bytes": offset, "params": entries}
    (dirpath / MANIFEST_NAME).write_text(json.dumps(manifest, indent=1), encoding="utf-8")


def load_params(dirpath):
    """Read a checkpoint directory back into ``{name: float32 array}``."""
    dirpath = Path(dirpath)
    manifest_path = dirpath / MANIFEST_NAME
    if not manifest_path.exists():
        raise CheckpointError(f"no {MANIFEST_NAME} in {dirpath}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    blob = (dirpath / BLOB_NAME).read_bytes()
    declared = manifest["total_bytes"]
    if len(blob) != declared:
        raise CheckpointError(f"blob is {len(blob)} bytes, manifest declares {declared}")
    covered = sum(e["byte_length"] for e in manifest["params"].values())
    if covered != declared:
        raise CheckpointError(f"manifest spans cover {covered} of {declared} bytes")
    out = {}
    for name, e in manifest["params"].items():
        lo, hi = e["byte_offset"], e["byte_offset"] + e["byte_length"]
        arr = np.frombuffer(blob[lo:hi], dtype="<f4").reshape(e["shape"])
        n_expected = int(np.prod(e["shape"])) if e["shape"] else 1
        if arr.size != n_expected:
            raise CheckpointError(f"parameter {name!r}: {arr.size} values for shape {e['shape']}")
        out[name] = arr.astype(np.float32)
    return out
