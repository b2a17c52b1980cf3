"""Checkpoints: a flat little-endian float64 archive plus a JSON manifest.

The manifest carries the tensor directory (name, shape, offset in elements),
gate metadata, and whatever run metadata the caller supplies; the archive is
the concatenation of the tensors in manifest order.  Loading verifies sizes
and returns exact bit-for-bit copies.
"""

from __future__ import annotations

import json
import os

import numpy as np

CHECKPOINT_SCHEMA_VERSION = 1
MANIFEST_NAME = "manifest.json"
ARCHIVE_NAME = "tensors.bin"


def save_checkpoint(dirpath: str, arrays: dict[str, np.ndarray], gates=(),
                    meta: dict | None = None) -> None:
    os.makedirs(dirpath, exist_ok=True)
    entries = []
    offset = 0
    names = sorted(arrays)
    for name in names:
        arr = np.asarray(arrays[name], dtype=np.float64)
        entries.append({"name": name, "shape": list(arr.shape),
                        "offset": offset, "count": int(arr.size)})
        offset += arr.size
    manifest = {
        "schema_version": CHECKPOINT_SCHEMA_VERSION,
        "dtype": "<f8",
        "total_elements": offset,
        "tensors": entries,
        "gates": [{"name": g.name, "threshold": g.threshold, "beta": g.beta,
                   "granularity": g.granularity, "dim": g.dim} for g in gates],
        "meta": meta or {},
    }
    with open(os.path.join(dirpath, ARCHIVE_NAME), "wb") as fh:
        for name in names:
            fh.write(np.ascontiguousarray(arrays[name], dtype="<f8").tobytes())
    with open(os.path.join(dirpath, MANIFEST_NAME), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)


def load_checkpoint(dirpath: str) -> tuple[dict[str, np.ndarray], dict]:
    """Returns (arrays, manifest); raises on missing or corrupt files."""
    man_path = os.path.join(dirpath, MANIFEST_NAME)
    bin_path = os.path.join(dirpath, ARCHIVE_NAME)
    if not os.path.exists(man_path) or not os.path.exists(bin_path):
        raise FileNotFoundError(f"{dirpath} is not a checkpoint directory")
    with open(man_path) as fh:
        manifest = json.load(fh)
    if manifest.get("schema_version") != CHECKPOINT_SCHEMA_VERSION:
        raise ValueError(f"unsupported checkpoint schema "
                         f"{manifest.get('schema_version')!r}")
    flat = np.fromfile(bin_path, dtype="<f8")
    if flat.size != manifest["total_elements"]:
        raise ValueError(f"corrupt checkpoint: archive holds {flat.size} elements, "
                         f"manifest says {manifest['total_elements']}")
    arrays = {}
    for entry in manifest["tensors"]:
        lo = entry["offset"]
        arr = flat[lo:lo + entry["count"]].reshape(entry["shape"])
        arrays[entry["name"]] = arr.astype(np.float64)
    return arrays, manifest
