"""Checkpoints: JSON manifest plus a little-endian float64 blob.

The blob holds all arrays back to back; the manifest's index table maps
each name to (shape, byte offset). The same blob scheme serializes
importance records.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .layers import ModelError
from .model import GnnModel, ModelConfig

FORMAT_VERSION = 1


def write_blob(path: str, arrays: Sequence[Tuple[str, np.ndarray]]
               ) -> List[dict]:
    """Write arrays into one binary file; return the index table."""
    index: List[dict] = []
    offset = 0
    with open(path, "wb") as f:
        for name, arr in arrays:
            data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
            index.append({"name": name, "shape": list(arr.shape),
                          "offset": offset})
            f.write(data)
            offset += len(data)
    return index


def read_blob(path: str, index: Sequence[dict]) -> Dict[str, np.ndarray]:
    with open(path, "rb") as f:
        raw = f.read()
    out: Dict[str, np.ndarray] = {}
    for entry in index:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=start)
        out[entry["name"]] = arr.reshape(shape).astype(np.float64)
    return out


def save_checkpoint(model: GnnModel, path: str) -> None:
    os.makedirs(path, exist_ok=True)
    cfg = asdict(model.config)
    cfg["heads"] = list(cfg["heads"])
    index = write_blob(os.path.join(path, "params.bin"),
                       model.state_arrays())
    manifest = {
        "format": FORMAT_VERSION,
        "config": cfg,
        "in_dim": model.in_dim,
        "num_classes": model.num_classes,
        "params": index,
    }
    with open(os.path.join(path, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=1)


def load_checkpoint(path: str) -> GnnModel:
    mpath = os.path.join(path, "manifest.json")
    if not os.path.exists(mpath):
        raise ModelError(f"no manifest.json under {path}")
    with open(mpath) as f:
        manifest = json.load(f)
    if manifest.get("format") != FORMAT_VERSION:
        raise ModelError(
            f"unsupported checkpoint format {manifest.get('format')!r}")
    cfg = dict(manifest["config"])
    cfg["heads"] = tuple(cfg["heads"])
    model = GnnModel(ModelConfig(**cfg), manifest["in_dim"],
                     manifest["num_classes"], np.random.default_rng(0))
    arrays = read_blob(os.path.join(path, "params.bin"),
                       manifest["params"])
    model.load_state(arrays)
    return model
