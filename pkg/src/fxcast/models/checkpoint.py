"""Single-file model checkpoints.

Layout: ``b"FXCK"``, format version (u32 LE), header length (u32 LE), a UTF-8
JSON header ``{"config": ..., "index": [{"name", "shape", "offset"}], "extra": ...}``
and finally the parameters as one little-endian float64 blob in index order.
``offset`` counts float64 elements from the start of the blob.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any

import numpy as np

from fxcast.errors import CheckpointError
from fxcast.models.base import ForecastModel, ModelConfig

MAGIC = b"FXCK"
VERSION = 1


def encode(model: ForecastModel, extra: dict[str, Any] | None = None) -> bytes:
    index, blobs, offset = [], [], 0
    for name, p in model.params.items():
        index.append({"name": name, "shape": list(p.shape), "offset": offset})
        blobs.append(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
        offset += p.size
    header = {"config": model.config.to_dict(), "index": index, "extra": extra or {}}
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return MAGIC + struct.pack("<II", VERSION, len(hb)) + hb + b"".join(blobs)


def decode(raw: bytes) -> tuple[ModelConfig, dict[str, np.ndarray], dict[str, Any]]:
    if raw[:4] != MAGIC or len(raw) < 12:
        raise CheckpointError("not an fxcast checkpoint")
    version, hlen = struct.unpack("<II", raw[4:12])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        header = json.loads(raw[12 : 12 + hlen])
    except (json.JSONDecodeError, UnicodeDecodeError):
        raise CheckpointError("corrupt checkpoint header") from None
    blob = np.frombuffer(raw[12 + hlen :], dtype="<f8")
    state = {}
    for entry in header["index"]:
        n = int(np.prod(entry["shape"], dtype=np.int64))
        start = entry["offset"]
        if start + n > blob.size:
            raise CheckpointError(f"parameter {entry['name']} runs past the end of the blob")
        state[entry["name"]] = blob[start : start + n].astype(np.float64).reshape(entry["shape"])
    return ModelConfig.from_dict(header["config"]), state, header.get("extra", {})


def save(model: ForecastModel, path: str | Path, extra: dict[str, Any] | None = None) -> None:
    Path(path).write_bytes(encode(model, extra))


def load(path: str | Path, expect: ModelConfig | None = None) -> tuple[ForecastModel, dict[str, Any]]:
    """Rebuild a model from ``path``; with ``expect`` the stored config must match it."""
    from fxcast.models import build

    config, state, extra = decode(Path(path).read_bytes())
    if expect is not None and expect.to_dict() != config.to_dict():
        raise CheckpointError(f"checkpoint config {config.to_dict()} does not match {expect.to_dict()}")
    model = build(config)
    try:
        model.load_state_dict(state)
    except Exception as exc:
        raise CheckpointError(f"checkpoint parameters do not fit the model: {exc}") from None
    return model, extra
