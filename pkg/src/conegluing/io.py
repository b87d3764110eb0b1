"""Grid dump files: a plain-text header followed by a raw little-endian float64 payload.

Layout::

    conegluing-grid 1
    kind metric
    n 3
    shape 64 64 64
    lower -20.0 -20.0 -20.0
    upper 20.0 20.0 20.0
    components 3 3
    order C
    sha256 <hex digest of the payload>
    end_header
    <payload: prod(components) * prod(shape) float64 values, '<f8', C order>

``kind`` is ``scalar`` (``components`` empty) or ``metric`` (``n n``).  Floats in
the header use ``repr`` so they round-trip exactly.  Identical arrays give
identical files.
"""
from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .grid import GridSpec
from .tensor_calculus import MetricField

MAGIC = "conegluing-grid 1"


def _fmt(values) -> str:
    return " ".join(repr(float(v)) if isinstance(v, float) else str(v) for v in values)


def dumps(data: np.ndarray, grid: GridSpec, kind: str) -> bytes:
    arr = np.ascontiguousarray(data, dtype="<f8")
    comps = arr.shape[: arr.ndim - grid.n]
    if arr.shape[arr.ndim - grid.n:] != grid.shape:
        raise ValueError(f"array shape {arr.shape} does not end in grid shape {grid.shape}")
    payload = arr.tobytes(order="C")
    head = [
        MAGIC,
        f"kind {kind}",
        f"n {grid.n}",
        f"shape {_fmt(grid.shape)}",
        f"lower {_fmt(grid.lower)}",
        f"upper {_fmt(grid.upper)}",
        f"components {_fmt(comps)}".rstrip(),
        "order C",
        f"sha256 {hashlib.sha256(payload).hexdigest()}",
        "end_header",
    ]
    return ("\n".join(head) + "\n").encode("ascii") + payload


def write_dump(path, data, grid: GridSpec | None = None, kind: str | None = None) -> None:
    """Write a :class:`MetricField` or a scalar array (with its grid)."""
    if isinstance(data, MetricField):
        blob = dumps(data.components, data.grid, "metric")
    else:
        blob = dumps(np.asarray(data), grid, kind or "scalar")
    Path(path).write_bytes(blob)


def read_dump(path):
    """Return ``(kind, grid, array)``; metric dumps are returned as :class:`MetricField`."""
    raw = Path(path).read_bytes()
    end = raw.find(b"end_header\n")
    if not raw.startswith(MAGIC.encode()) or end < 0:
        raise ConfigError(f"{path}: not a grid dump (bad magic or missing end_header)")
    fields = {}
    for line in raw[:end].decode("ascii").splitlines()[1:]:
        key, _, rest = line.partition(" ")
        fields[key] = rest.split()
    payload = raw[end + len(b"end_header\n"):]
    if hashlib.sha256(payload).hexdigest() != fields["sha256"][0]:
        raise ConfigError(f"{path}: payload checksum mismatch")
    shape = tuple(int(v) for v in fields["shape"])
    comps = tuple(int(v) for v in fields.get("components", []))
    grid = GridSpec(tuple(float(v) for v in fields["lower"]), tuple(float(v) for v in fields["upper"]), shape)
    arr = np.frombuffer(payload, dtype="<f8").reshape(comps + shape).copy()
    kind = fields["kind"][0]
    if kind == "metric":
        return kind, grid, MetricField(grid, arr)
    return kind, grid, arr
