"""Checkpoint directories: a JSON manifest plus one raw blob per tensor.

Blobs are little-endian float64, row-major; the manifest records each blob's
shape and byte length so a loader can validate before trusting the data.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from firereinit.params import Architecture, LayerWeights, NetworkParams

FORMAT = "firereinit-checkpoint"
VERSION = 1
MANIFEST = "manifest.json"


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(path, params: NetworkParams, seed: int = 0, step: int = 0,
                    extra: dict | None = None) -> Path:
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
        tensors = []
        for i, lw in enumerate(params.layers):
            for role, arr in (("weight", lw.weight), ("bias", lw.bias)):
                if arr is None:
                    continue
                name = f"layer{i:02d}_{role}.bin"
                blob = np.ascontiguousarray(arr, dtype="<f8").tobytes(order="C")
                (path / name).write_bytes(blob)
                tensors.append({"layer": i, "role": role, "file": name,
                                "shape": list(arr.shape), "dtype": "<f8", "nbytes": len(blob)})
        manifest = {
            "format": FORMAT,
            "version": VERSION,
            "architecture": params.arch.to_dict(),
            "seed": int(seed),
            "step": int(step),
            "extra": extra or {},
            "tensors": tensors,
        }
        tmp = path / (MANIFEST + ".tmp")
        tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True))
        os.replace(tmp, path / MANIFEST)
    except OSError as exc:
        raise CheckpointError(f"failed to write checkpoint at {path}: {exc}") from exc
    return path


def load_checkpoint(path) -> tuple[NetworkParams, dict]:
    """Return ``(params, manifest)``."""
    path = Path(path)
    try:
        manifest = json.loads((path / MANIFEST).read_text())
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"cannot read manifest in {path}: {exc}") from exc
    if manifest.get("format") != FORMAT:
        raise CheckpointError(f"{path} is not a {FORMAT} directory")
    arch = Architecture.from_dict(manifest["architecture"])
    found: dict[tuple[int, str], np.ndarray] = {}
    for t in manifest["tensors"]:
        blob_path = path / t["file"]
        try:
            blob = blob_path.read_bytes()
        except OSError as exc:
            raise CheckpointError(f"missing tensor blob {blob_path}: {exc}") from exc
        if len(blob) != t["nbytes"]:
            raise CheckpointError(
                f"{blob_path}: expected {t['nbytes']} bytes, found {len(blob)}"
            )
        arr = np.frombuffer(blob, dtype="<f8").reshape(t["shape"]).astype(np.float64)
        found[(t["layer"], t["role"])] = arr
    layers = []
    for i, spec in enumerate(arch.layers):
        if (i, "weight") not in found:
            raise CheckpointError(f"{path}: layer {i} weight missing")
        layers.append(LayerWeights(spec.kind, found[(i, "weight")], found.get((i, "bias"))))
    return NetworkParams(arch, layers), manifest
