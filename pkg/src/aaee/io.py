"""Binary snapshots, diagnostics CSV and PGM images.

Snapshot layout (little-endian)::

    offset  size  field
    0       4     magic b"AAE2"
    4       4     format version (u32) = 1
    8       4     nx (u32)
    12      4     ny (u32)
    16      8     lx (f64)
    24      8     ly (f64)
    32      8     t (f64)
    40      4     component count (u32): 5, or 7 with the one-form
    44      1     flags: bit 0 one-form present, bit 1 loop present
    45      ...   components u1, u2, F11, F12, F22[, xi1, xi2], each ny*nx f64
                  row-major (x fastest)
    then, if bit 1: marker count m (u32) followed by m (x, y) f64 pairs

A state without one-form or loop therefore occupies ``45 + 5 * nx * ny * 8``
bytes.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .diagnostics import DiagnosticsRecord
from .dynamics import SimState
from .grid_fields import Grid2D, OneFormField, SymTensorField, VectorField

MAGIC = b"AAE2"
VERSION = 1
_HEADER = struct.Struct("<4sIIIdddI")
HEADER_SIZE = _HEADER.size  # 44


class SnapshotError(ValueError):
    pass


def write_snapshot(state: SimState, path) -> None:
    g = state.grid
    has_xi = state.xi_flat is not None
    has_loop = state.loop is not None
    comps = [state.u.data, state.F.data] + ([state.xi_flat.data] if has_xi else [])
    block = np.concatenate([np.asarray(c, dtype="<f8").reshape(-1) for c in comps])
    parts = [
        _HEADER.pack(MAGIC, VERSION, g.nx, g.ny, g.lx, g.ly, float(state.t), 7 if has_xi else 5),
        bytes([int(has_xi) | (int(has_loop) << 1)]),
        block.tobytes(),
    ]
    if has_loop:
        loop = np.asarray(state.loop, dtype="<f8")
        parts.append(struct.pack("<I", len(loop)))
        parts.append(loop.tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_snapshot(path, expect_grid: Grid2D | None = None) -> SimState:
    buf = Path(path).read_bytes()

    def need(end):
        if len(buf) < end:
            raise SnapshotError(f"{path}: truncated at byte {len(buf)} (expected at least {end})")

    need(HEADER_SIZE + 1)
    magic, version, nx, ny, lx, ly, t, ncomp = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise SnapshotError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise SnapshotError(f"{path}: unsupported format version {version}")
    flags = buf[HEADER_SIZE]
    has_xi, has_loop = bool(flags & 1), bool(flags & 2)
    if ncomp != (7 if has_xi else 5):
        raise SnapshotError(f"{path}: component count {ncomp} inconsistent with flags {flags}")
    try:
        g = Grid2D(nx, ny, lx, ly)
    except ValueError as exc:
        raise SnapshotError(f"{path}: invalid grid in header: {exc}")
    if expect_grid is not None and g != expect_grid:
        raise SnapshotError(
            f"{path}: dimension mismatch: file has {nx}x{ny} on {lx}x{ly}, "
            f"expected {expect_grid.nx}x{expect_grid.ny} on {expect_grid.lx}x{expect_grid.ly}")
    off = HEADER_SIZE + 1
    n = nx * ny * ncomp
    need(off + 8 * n)
    data = np.frombuffer(buf, dtype="<f8", count=n, offset=off).astype(float).reshape(ncomp, ny, nx)
    off += 8 * n
    loop = None
    if has_loop:
        need(off + 4)
        (m,) = struct.unpack_from("<I", buf, off)
        off += 4
        need(off + 16 * m)
        loop = np.frombuffer(buf, dtype="<f8", count=2 * m, offset=off).astype(float).reshape(m, 2)
        off += 16 * m
    if off != len(buf):
        raise SnapshotError(f"{path}: {len(buf) - off} trailing bytes after byte {off}")
    return SimState(
        t=t, u=VectorField(g, data[0:2]), F=SymTensorField(g, data[2:5]),
        xi_flat=OneFormField(g, data[5:7]) if has_xi else None, loop=loop)


# -- diagnostics CSV ------------------------------------------------------------------


def _fmt(v) -> str:
    return "" if v is None else "%.17g" % v


def append_diagnostics_row(record: DiagnosticsRecord, path) -> None:
    if not record.is_finite():
        raise ValueError(f"non-finite diagnostics at t={record.t}")
    path = Path(path)
    new = not path.exists() or path.stat().st_size == 0
    with open(path, "a", encoding="ascii", newline="\n") as fh:
        if new:
            fh.write(",".join(DiagnosticsRecord.COLUMNS) + "\n")
        fh.write(",".join(_fmt(v) for v in record.values()) + "\n")


def read_diagnostics(path) -> list[dict]:
    lines = Path(path).read_text(encoding="ascii").splitlines()
    header = lines[0].split(",")
    return [{k: (float(v) if v else None) for k, v in zip(header, line.split(","))}
            for line in lines[1:]]


# -- images ---------------------------------------------------------------------------


def field_to_bytes(values: np.ndarray) -> np.ndarray:
    """Min-max map to 0..255; constant fields map to 128."""
    f = np.asarray(values, dtype=float)
    lo, hi = float(np.min(f)), float(np.max(f))
    if hi == lo:
        return np.full(f.shape, 128, dtype=np.uint8)
    return np.rint((f - lo) / (hi - lo) * 255).astype(np.uint8)


def emit_field_image(values, path) -> None:
    """Write a binary PGM with y pointing up (first image row is the top of the domain)."""
    data = values.data if hasattr(values, "data") else np.asarray(values)
    if not np.all(np.isfinite(data)):
        raise ValueError("cannot render a field with non-finite values")
    ny, nx = data.shape
    pix = field_to_bytes(data)[::-1]
    Path(path).write_bytes(f"P5\n{nx} {ny}\n255\n".encode("ascii") + pix.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    head, rest = raw.split(b"\n", 3)[:3], raw.split(b"\n", 3)[3]
    if head[0] != b"P5" or head[2] != b"255":
        raise ValueError("not an 8-bit binary PGM")
    nx, ny = (int(v) for v in head[1].split())
    return np.frombuffer(rest, dtype=np.uint8).reshape(ny, nx)
