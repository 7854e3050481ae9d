"""Checkpoint container: text header plus little-endian float64 payload.

Layout, in one file:

    GLOSSCKPT 1\n
    meta <compact json>\n            (optional, single line)
    tensor <name> <d0,d1,...> <byte offset>\n   (one line per array)
    data\n
    <raw bytes: little-endian float64, in header order>

Offsets are relative to the first payload byte. Round-trips are bit
exact: arrays are written with ``tobytes()`` and read back with
``frombuffer`` on the same dtype.
"""
from __future__ import annotations

import json

import numpy as np

MAGIC = "GLOSSCKPT 1"


class CheckpointError(ValueError):
    """Malformed checkpoint file or invalid save request."""


def save(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Write named float arrays (and optional JSON metadata) to ``path``."""
    lines = [MAGIC]
    if meta is not None:
        lines.append("meta " + json.dumps(meta, separators=(",", ":"), sort_keys=True))
    payload = bytearray()
    for name, arr in arrays.items():
        if any(ch.isspace() for ch in name) or not name:
            raise CheckpointError(f"invalid tensor name {name!r}")
        arr = np.ascontiguousarray(arr, dtype="<f8")
        if arr.ndim == 0:
            arr = arr.reshape(1)
        dims = ",".join(str(d) for d in arr.shape)
        lines.append(f"tensor {name} {dims} {len(payload)}")
        payload.extend(arr.tobytes())
    lines.append("data")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("utf-8"))
        fh.write(bytes(payload))


def load(path) -> tuple[dict[str, np.ndarray], dict | None]:
    """Read a checkpoint, returning (arrays, meta)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    header_end = _find_data_line(blob)
    header = blob[:header_end].decode("utf-8").splitlines()
    payload = blob[header_end + len(b"data\n"):]
    if not header or header[0] != MAGIC:
        raise CheckpointError(f"{path}: bad magic line")
    meta = None
    arrays: dict[str, np.ndarray] = {}
    for line in header[1:]:
        if line.startswith("meta "):
            meta = json.loads(line[len("meta "):])
        elif line.startswith("tensor "):
            try:
                _, name, dims, offset = line.split(" ")
                shape = tuple(int(d) for d in dims.split(","))
                offset = int(offset)
            except ValueError as err:
                raise CheckpointError(f"{path}: bad tensor line {line!r}") from err
            count = int(np.prod(shape))
            raw = payload[offset:offset + count * 8]
            if len(raw) != count * 8:
                raise CheckpointError(f"{path}: payload truncated for {name}")
            arrays[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
        else:
            raise CheckpointError(f"{path}: unrecognized header line {line!r}")
    return arrays, meta


def _find_data_line(blob: bytes) -> int:
    marker = b"\ndata\n"
    idx = blob.find(marker)
    if idx < 0:
        if blob.startswith(b"data\n"):
            return 0
        raise CheckpointError("no data marker found")
    return idx + 1
