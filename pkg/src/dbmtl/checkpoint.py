"""Checkpoints: a JSON manifest plus a little-endian float64 sidecar.

The manifest lists every tensor as ``{name, shape, byte_offset, byte_len}``
in the order the values are concatenated in the ``.bin`` file.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ContractError, DataError
from .tensor import ParamStore

FORMAT_VERSION = 1


def save_checkpoint(path, params: ParamStore, config: dict | None = None) -> Path:
    """Write ``path`` (manifest) and ``path`` with suffix ``.bin`` (values)."""
    path = Path(path)
    bin_path = path.with_suffix(".bin")
    tensors, chunks, offset = [], [], 0
    for name in params:
        data = np.ascontiguousarray(params[name], dtype="<f8").tobytes()
        tensors.append({
            "name": name,
            "shape": list(params[name].shape),
            "byte_offset": offset,
            "byte_len": len(data),
        })
        chunks.append(data)
        offset += len(data)
    manifest = {
        "format_version": FORMAT_VERSION,
        "binary": bin_path.name,
        "tensors": tensors,
    }
    if config is not None:
        manifest["config"] = config
    bin_path.write_bytes(b"".join(chunks))
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def read_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    """Return ``(tensors, manifest)``; tensors keep manifest order."""
    path = Path(path)
    manifest = json.loads(path.read_text())
    if manifest.get("format_version") != FORMAT_VERSION:
        raise DataError(f"unsupported checkpoint format {manifest.get('format_version')!r}")
    blob = (path.parent / manifest.get("binary", path.with_suffix(".bin").name)).read_bytes()
    tensors = {}
    for entry in manifest["tensors"]:
        start, length = entry["byte_offset"], entry["byte_len"]
        if start + length > len(blob):
            raise DataError(f"tensor {entry['name']!r} extends past end of sidecar")
        arr = np.frombuffer(blob[start:start + length], dtype="<f8")
        shape = tuple(entry["shape"])
        if arr.size != int(np.prod(shape, dtype=np.int64)):
            raise DataError(f"tensor {entry['name']!r} size does not match shape {shape}")
        tensors[entry["name"]] = arr.reshape(shape).astype(np.float64)
    return tensors, manifest


def load_into(params: ParamStore, path) -> dict:
    tensors, manifest = read_checkpoint(path)
    if set(tensors) != set(params):
        raise ContractError("checkpoint tensors do not match the model's parameters")
    params.load_state(tensors)
    return manifest
