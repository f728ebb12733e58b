"""Checkpoint persistence: JSON manifest plus a flat little-endian float64 sidecar.

Manifest layout::

    {"format": "rose-checkpoint/1", "step": 120, "data_file": "model.bin",
     "config": {...}, "classes": [0, 1],
     "groups": [{"name": "layer0.weight", "shape": [5, 32],
                 "offset": 0, "count": 160, "sha256": "..."}, ...]}

``offset`` is a byte offset into the sidecar; groups are stored back to back
in manifest order.
"""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path
from typing import Optional

import numpy as np

from .model import ParamSet

__all__ = ["CheckpointError", "FORMAT", "load_checkpoint", "save_checkpoint"]

FORMAT = "rose-checkpoint/1"
_DTYPE = np.dtype("<f8")


class CheckpointError(ValueError):
    """Corrupt or inconsistent checkpoint; ``offset`` locates the first problem."""

    def __init__(self, message: str, offset: Optional[int] = None):
        super().__init__(message if offset is None else f"{message} (byte offset {offset})")
        self.offset = offset


def _sidecar_path(manifest_path: Path) -> Path:
    return manifest_path.with_suffix(".bin")


def save_checkpoint(path, params: ParamSet, step: int = 0, config: Optional[dict] = None,
                    classes=None) -> Path:
    """Write ``<path>`` (manifest) and ``<path minus suffix>.bin``."""
    path = Path(path)
    sidecar = _sidecar_path(path)
    groups, chunks, offset = [], [], 0
    for name, value in params.items():
        raw = np.ascontiguousarray(value, dtype=_DTYPE).tobytes()
        groups.append({
            "name": name,
            "shape": list(np.shape(value)),
            "offset": offset,
            "count": int(np.size(value)),
            "sha256": hashlib.sha256(raw).hexdigest(),
        })
        chunks.append(raw)
        offset += len(raw)
    manifest = {
        "format": FORMAT,
        "step": int(step),
        "data_file": sidecar.name,
        "config": config,
        "classes": None if classes is None else [c.item() if hasattr(c, "item") else c for c in classes],
        "groups": groups,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    sidecar.write_bytes(b"".join(chunks))
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_checkpoint(path) -> tuple[ParamSet, dict]:
    """Return ``(params, manifest)``; raises :class:`CheckpointError` on any inconsistency."""
    path = Path(path)
    try:
        manifest = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read manifest {path}: {exc}") from exc
    if not isinstance(manifest, dict) or manifest.get("format") != FORMAT:
        raise CheckpointError(f"{path} is not a {FORMAT} manifest")
    sidecar = path.parent / manifest.get("data_file", _sidecar_path(path).name)
    try:
        blob = sidecar.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read data file {sidecar}: {exc}") from exc

    params = ParamSet()
    expected = 0
    for group in manifest.get("groups", []):
        name, shape = group["name"], tuple(group["shape"])
        offset, count = int(group["offset"]), int(group["count"])
        if offset != expected:
            raise CheckpointError(f"group {name!r} starts at {offset}, expected {expected}", expected)
        if math.prod(shape) != count:
            raise CheckpointError(f"group {name!r} shape {list(shape)} does not hold {count} elements", offset)
        end = offset + count * _DTYPE.itemsize
        if end > len(blob):
            raise CheckpointError(f"data file truncated inside group {name!r}", len(blob))
        raw = blob[offset:end]
        if "sha256" in group and hashlib.sha256(raw).hexdigest() != group["sha256"]:
            raise CheckpointError(f"checksum mismatch in group {name!r}", offset)
        values = np.frombuffer(raw, dtype=_DTYPE).astype(np.float64).reshape(shape)
        bad = np.flatnonzero(~np.isfinite(values.ravel()))
        if bad.size:
            raise CheckpointError(f"non-finite value in group {name!r}", offset + int(bad[0]) * _DTYPE.itemsize)
        params[name] = values
        expected = end
    if expected != len(blob):
        raise CheckpointError(f"{len(blob) - expected} trailing bytes after last group", expected)
    return params, manifest


def checkpoint_bytes(path) -> bytes:
    """Manifest and sidecar bytes concatenated, for equality checks."""
    path = Path(path)
    return path.read_bytes() + _sidecar_path(path).read_bytes()

