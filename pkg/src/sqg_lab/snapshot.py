"""Binary snapshot format for scalar fields.

Layout: a 32-byte little-endian header followed by the physical samples.

    bytes 0..3    magic b"SQGF"
    bytes 4..7    u32 format version (currently 1)
    bytes 8..11   u32 grid size n
    bytes 12..19  f64 box side L
    bytes 20..27  f64 simulation time t
    bytes 28..31  zero padding
    bytes 32..    n*n little-endian f64 samples, row major

Round trips are bit exact: the payload is the raw sample buffer.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .spectral import Field, Grid2D

MAGIC = b"SQGF"
VERSION = 1
_HEADER = struct.Struct("<4sIIdd4x")


class SnapshotFormatError(ValueError):
    """Raised for files that do not parse as field snapshots."""


def dump_field(field: Field, t: float, path) -> None:
    path = Path(path)
    grid = field.grid
    header = _HEADER.pack(MAGIC, VERSION, grid.n, grid.L, float(t))
    payload = np.ascontiguousarray(field.physical, dtype="<f8").tobytes()
    path.write_bytes(header + payload)


def load_field(path) -> tuple[Field, float]:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise SnapshotFormatError("file shorter than the snapshot header")
    magic, version, n, L, t = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise SnapshotFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise SnapshotFormatError(f"unsupported snapshot version {version}")
    expected = _HEADER.size + 8 * n * n
    if len(raw) != expected:
        raise SnapshotFormatError(
            f"payload size mismatch: file has {len(raw)} bytes, header "
            f"implies {expected}"
        )
    samples = np.frombuffer(raw, dtype="<f8", count=n * n,
                            offset=_HEADER.size).reshape(n, n)
    grid = Grid2D(n, L)
    return Field.from_physical(grid, samples.astype(np.float64)), t
