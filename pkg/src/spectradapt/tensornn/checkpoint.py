"""Parameter checkpoints: JSON manifest plus flat little-endian binary.

The round trip is exact: float64 bytes are written verbatim.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .network import ParamStore

MANIFEST_NAME = "params.json"
BINARY_NAME = "params.bin"


def save_params(store: ParamStore, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    blobs = []
    for name in store.names():
        p = store[name]
        entries.append({"name": name, "shape": list(p.shape),
                        "dtype": "float64", "decay": store.decay[name]})
        blobs.append(p.data.astype("<f8", copy=False).tobytes())
    manifest = {"format": "spectradapt-params-v1", "tensors": entries}
    (directory / MANIFEST_NAME).write_text(
        json.dumps(manifest, indent=1, sort_keys=True))
    (directory / BINARY_NAME).write_bytes(b"".join(blobs))


def load_params(directory: str | Path) -> ParamStore:
    directory = Path(directory)
    manifest = json.loads((directory / MANIFEST_NAME).read_text())
    raw = (directory / BINARY_NAME).read_bytes()
    store = ParamStore()
    offset = 0
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(raw, dtype="<f8", count=count, offset=offset)
        offset += count * 8
        store.add(entry["name"], data.reshape(shape).astype(np.float64),
                  entry["decay"])
    if offset != len(raw):
        raise ValueError("checkpoint binary length does not match manifest")
    return store
