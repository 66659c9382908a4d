"""Binary checkpoint container.

Layout (all integers little-endian)::

    8 bytes   magic  b"TFCAMCK\\x01"
    8 bytes   uint64 header length H
    H bytes   UTF-8 JSON header (sorted keys)
    ...       tensor payload: float64 little-endian, row-major, concatenated

The header holds ``format_version``, ``config``, ``history``, ``metadata``
and ``tensors``: a list of ``{"name", "shape", "offset", "count"}`` where
``offset`` and ``count`` are in float64 elements from the payload start.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

from .models import ModelConfig, init_params
from .training import TrainedModel

MAGIC = b"TFCAMCK\x01"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(model: TrainedModel) -> bytes:
    tensors, chunks, offset = [], [], 0
    for p in model.parameters():
        data = np.ascontiguousarray(p.data, dtype="<f8")
        tensors.append({"name": p.name, "shape": list(p.shape), "offset": offset,
                        "count": int(data.size)})
        chunks.append(data.tobytes())
        offset += data.size
    header = {
        "format_version": FORMAT_VERSION,
        "config": model.config.to_dict(),
        "history": [float(h) for h in model.history],
        "metadata": model.metadata,
        "tensors": tensors,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(blob)) + blob + b"".join(chunks)


def loads(raw: bytes) -> TrainedModel:
    if raw[:8] != MAGIC:
        raise CheckpointError("not a TFCAM checkpoint (bad magic)")
    (size,) = struct.unpack("<Q", raw[8:16])
    try:
        header = json.loads(raw[16:16 + size].decode("utf-8"))
    except ValueError as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {header.get('format_version')}")
    payload = np.frombuffer(raw[16 + size:], dtype="<f8")
    config = ModelConfig.from_dict(header["config"])
    params = init_params(config, np.random.default_rng(0))
    model = TrainedModel(config, params, list(header["history"]), header.get("metadata", {}))
    named = model.named_parameters()
    entries = {t["name"]: t for t in header["tensors"]}
    if set(entries) != set(named):
        raise CheckpointError("checkpoint tensors do not match the model architecture")
    for name, param in named.items():
        t = entries[name]
        if tuple(t["shape"]) != param.shape or t["offset"] + t["count"] > payload.size:
            raise CheckpointError(f"tensor {name!r} has an inconsistent shape or offset")
        param.data = payload[t["offset"]:t["offset"] + t["count"]].reshape(param.shape).astype(np.float64)
        param.zero_grad()
    return model


def atomic_write(path, data: bytes) -> None:
    """Write to a sibling temporary file, then rename over ``path``."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save(model: TrainedModel, path) -> None:
    atomic_write(path, dumps(model))


def load(path) -> TrainedModel:
    with open(path, "rb") as fh:
        return loads(fh.read())
