"""Self-describing binary checkpoint files.

Layout: an 8-byte magic, a little-endian uint64 manifest length, a JSON
manifest listing (name, shape, byte offset) per array plus free-form
metadata, then the concatenated raw little-endian float64 payloads.
Round-trips are bit-exact.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

__all__ = ["load_checkpoint", "save_checkpoint"]

_MAGIC = b"PATCHKP1"


def save_checkpoint(path: str | Path, arrays: dict[str, np.ndarray], metadata: dict) -> None:
    entries = []
    offset = 0
    payloads = []
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        payloads.append(arr.tobytes())
        offset += arr.nbytes
    manifest = json.dumps(
        {"metadata": metadata, "params": entries}, sort_keys=True, separators=(",", ":")
    ).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(np.uint64(len(manifest)).astype("<u8").tobytes())
        fh.write(manifest)
        for blob in payloads:
            fh.write(blob)


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (manifest_len,) = np.frombuffer(fh.read(8), dtype="<u8")
        manifest = json.loads(fh.read(int(manifest_len)).decode())
        payload = fh.read()
    arrays: dict[str, np.ndarray] = {}
    for entry in manifest["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=start)
        arrays[entry["name"]] = arr.reshape(shape).astype(np.float64)
    return arrays, manifest["metadata"]
