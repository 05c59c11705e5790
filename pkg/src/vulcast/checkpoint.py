"""Parameter checkpoint container.

Layout: an 8-byte little-endian header length, a JSON header (model spec,
parameter names, shapes, and float offsets), then the parameter payload as
raw little-endian float64 values in header order.  AR coefficients use the
same container with ``{"kind": "ar"}`` in place of a neural model spec.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

__all__ = ["save_checkpoint", "load_checkpoint"]


def save_checkpoint(path, model_spec: dict, named_params, extra: dict | None = None):
    """Write a checkpoint.  ``named_params`` is an iterable of (name, array)."""
    entries = []
    blobs = []
    offset = 0
    for name, value in named_params:
        arr = np.ascontiguousarray(np.asarray(value, dtype="<f8"))
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.size
    header = {
        "format": "vulcast-checkpoint-v1",
        "model_spec": model_spec,
        "params": entries,
        "extra": extra or {},
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(hbytes)))
        fh.write(hbytes)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path):
    """Read a checkpoint; returns (model_spec, {name: array}, extra)."""
    raw = Path(path).read_bytes()
    (hlen,) = struct.unpack_from("<Q", raw, 0)
    header = json.loads(raw[8:8 + hlen].decode("utf-8"))
    if header.get("format") != "vulcast-checkpoint-v1":
        raise ValueError(f"{path}: not a vulcast checkpoint")
    payload = np.frombuffer(raw[8 + hlen:], dtype="<f8")
    params = {}
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        params[entry["name"]] = payload[start:start + n].reshape(shape).astype(np.float64)
    return header["model_spec"], params, header.get("extra", {})
