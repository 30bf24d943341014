"""Parameter snapshots.

Layout: 8-byte magic ``PASTSNP1``, little-endian uint64 header length, a
UTF-8 JSON header (model spec and segment manifest, sorted keys), then the
parameter vector as little-endian float64.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .nn import ModelSpec, ParameterStore, Segment

MAGIC = b"PASTSNP1"


def save_snapshot(path, params: ParameterStore, spec: ModelSpec, meta: dict | None = None) -> None:
    header = {
        "format": 1,
        "dtype": "<f8",
        "num_params": len(params),
        "model": {
            "input_dim": spec.input_dim,
            "layer_widths": list(spec.layer_widths),
            "num_classes": spec.num_classes,
            "activation": spec.activation,
        },
        "segments": [{"name": s.name, "offset": s.offset, "length": s.length} for s in params.segments],
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with Path(path).open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(params.values.astype("<f8").tobytes())


def load_snapshot(path) -> tuple[ParameterStore, ModelSpec, dict]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"snapshot not found: {path}")
    raw = path.read_bytes()
    if raw[:8] != MAGIC:
        raise ValueError(f"{path}: not a parameter snapshot")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + hlen].decode())
    values = np.frombuffer(raw[16 + hlen:], dtype="<f8").astype(np.float64)
    if values.shape[0] != header["num_params"]:
        raise ValueError(f"{path}: expected {header['num_params']} values, found {values.shape[0]}")
    m = header["model"]
    spec = ModelSpec(m["input_dim"], tuple(m["layer_widths"]), m["num_classes"], m["activation"])
    segs = tuple(Segment(s["name"], s["offset"], s["length"]) for s in header["segments"])
    return ParameterStore(values, segs), spec, header.get("meta", {})
