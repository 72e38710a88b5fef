"""JSON checkpoints of named float64 tensors plus string metadata."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import CheckpointCorruptError, CheckpointNotFoundError, CheckpointVersionError

FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    metadata: dict[str, str] = field(default_factory=dict)
    version: int = FORMAT_VERSION


def checkpoint_to_json(ck: Checkpoint) -> str:
    tensors = {}
    for name, arr in ck.tensors.items():
        arr = np.asarray(arr, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"tensor {name!r} has non-finite entries")
        # float() of a float64 serializes via repr, which round-trips exactly
        tensors[name] = {"shape": list(arr.shape), "data": [float(x) for x in arr.reshape(-1)]}
    doc = {"version": ck.version, "tensors": tensors, "metadata": {k: str(v) for k, v in ck.metadata.items()}}
    return json.dumps(doc, allow_nan=False, separators=(",", ":")) + "\n"


def save_checkpoint(ck: Checkpoint, path: str | Path) -> None:
    Path(path).write_text(checkpoint_to_json(ck), encoding="utf-8")


def load_checkpoint(path: str | Path, expected_version: int = FORMAT_VERSION) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointNotFoundError(f"checkpoint not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointCorruptError(f"{path}: not valid checkpoint JSON ({exc})") from exc
    if not isinstance(doc, dict) or "version" not in doc:
        raise CheckpointCorruptError(f"{path}: missing version field")
    if doc["version"] != expected_version:
        raise CheckpointVersionError(f"{path}: version {doc['version']!r}, expected {expected_version}")
    tensors = {}
    try:
        for name, entry in doc["tensors"].items():
            shape = [int(d) for d in entry["shape"]]
            data = entry["data"]
            if any(d <= 0 for d in shape) or len(data) != math.prod(shape):
                raise CheckpointCorruptError(f"{path}: tensor {name!r} has {len(data)} values for shape {shape}")
            tensors[name] = np.asarray(data, dtype=np.float64).reshape(shape)
        metadata = {str(k): str(v) for k, v in doc["metadata"].items()}
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        if isinstance(exc, CheckpointCorruptError):
            raise
        raise CheckpointCorruptError(f"{path}: malformed checkpoint ({exc!r})") from exc
    return Checkpoint(tensors=tensors, metadata=metadata, version=doc["version"])
