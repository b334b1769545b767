"""Grid dumps: b"SEPG" | u64 header length | JSON header | float64 LE values.

The header holds ``shape``, ``axes`` (coordinate lists), ``dtype`` (always
``"f64le"``) and a free-form ``descriptor``. Values are row-major.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .tensor import DTYPE, DimensionError

GRID_MAGIC = b"SEPG"


def write_grid(path, values, axes, descriptor: dict | None = None) -> None:
    values = np.asarray(values, dtype=DTYPE)
    axes = [np.asarray(a, dtype=DTYPE).ravel() for a in axes]
    lens = tuple(a.size for a in axes)
    if values.shape[-len(lens):] != lens:
        raise DimensionError(f"values {values.shape} do not end with axis lengths {lens}")
    header = {
        "shape": list(values.shape),
        "axes": [a.tolist() for a in axes],
        "dtype": "f64le",
        "descriptor": _jsonable(descriptor or {}),
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(GRID_MAGIC)
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        fh.write(np.ascontiguousarray(values, dtype="<f8").tobytes())


def read_grid(path):
    """``(values, axes, descriptor)``."""
    raw = Path(path).read_bytes()
    if raw[:4] != GRID_MAGIC:
        raise ValueError(f"{path} is not a grid dump")
    (n,) = struct.unpack("<Q", raw[4:12])
    header = json.loads(raw[12 : 12 + n].decode("utf-8"))
    if header.get("dtype") != "f64le":
        raise ValueError(f"unsupported dtype {header.get('dtype')!r}")
    values = np.frombuffer(raw[12 + n :], dtype="<f8").astype(DTYPE).reshape(header["shape"])
    axes = [np.asarray(a, dtype=DTYPE) for a in header["axes"]]
    return values, axes, header["descriptor"]


def write_solution(path, sol) -> None:
    write_grid(path, sol.values, sol.axes, sol.descriptor)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj
