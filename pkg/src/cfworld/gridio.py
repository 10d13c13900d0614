"""``IOCC v1`` grid files.

Little-endian layout::

    magic    4s   b"IOCC"
    version  u16  1
    nx ny nz u32 x3
    voxel    f32
    origin   f32 x3
    maskbits u16  16
    payload  u16 x (nx*ny*nz), x-fastest
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from .grid import GridGeometry, SemanticGrid

MAGIC = b"IOCC"
VERSION = 1
MASK_BITS = 16
_HEADER = struct.Struct("<4sHIIIf3fH")


class GridFormatError(ValueError):
    pass


class BadMagicError(GridFormatError):
    pass


class VersionMismatchError(GridFormatError):
    pass


class TruncatedPayloadError(GridFormatError):
    pass


def _f32_exact(value: float) -> float:
    # shortest decimal that round-trips through float32, so 0.4 reads back as 0.4
    return float(str(np.float32(value)))


def grid_to_bytes(grid: SemanticGrid) -> bytes:
    g = grid.geometry
    header = _HEADER.pack(MAGIC, VERSION, g.nx, g.ny, g.nz, g.voxel_size, *g.origin, MASK_BITS)
    return header + grid.data.ravel(order="F").astype("<u2").tobytes()


def grid_from_bytes(buf: bytes) -> SemanticGrid:
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise BadMagicError(f"bad magic {bytes(buf[:4])!r}, expected {MAGIC!r}")
    if len(buf) < _HEADER.size:
        raise TruncatedPayloadError("file shorter than the IOCC header")
    _, version, nx, ny, nz, vs, ox, oy, oz, bits = _HEADER.unpack_from(buf)
    if version != VERSION:
        raise VersionMismatchError(f"unsupported IOCC version {version}")
    if bits != MASK_BITS:
        raise GridFormatError(f"unsupported mask width {bits}")
    geom = GridGeometry(nx, ny, nz, _f32_exact(vs), (_f32_exact(ox), _f32_exact(oy), _f32_exact(oz)))
    n = nx * ny * nz
    payload = memoryview(buf)[_HEADER.size:]
    if len(payload) < 2 * n:
        raise TruncatedPayloadError(f"payload has {len(payload)} bytes, expected {2 * n}")
    if len(payload) > 2 * n:
        raise GridFormatError(f"{len(payload) - 2 * n} trailing bytes after payload")
    flat = np.frombuffer(payload, dtype="<u2", count=n).astype(np.uint16)
    return SemanticGrid(geom, flat.reshape(geom.shape, order="F"))


def write_grid(path: str | os.PathLike, grid: SemanticGrid) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(grid_to_bytes(grid))
    return path


def read_grid(path: str | os.PathLike) -> SemanticGrid:
    return grid_from_bytes(Path(path).read_bytes())
