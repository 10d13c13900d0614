"""Semantic occupancy grids: label vocabulary, grid geometry and voxel lookups.

Each voxel stores a 16-bit label mask (bit ``i`` set iff label code ``i`` is
present), so a voxel can carry several labels at once, e.g. ``{Ego, Vehicle}``
during a collision.  Arrays are indexed ``data[ix, iy, iz]``; flat voxel
indices and the on-disk payload are x-fastest (``ix + nx * (iy + ny * iz)``).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

# Voxel centres are rounded to this many decimals so that the same lattice
# point computed through different windows compares equal.
_CENTER_DECIMALS = 9
_QUANT_EPS = 1e-9


class SemanticLabel(enum.IntEnum):
    FREE = 0
    DRIVABLE = 1
    SIDEWALK = 2
    VEGETATION = 3
    BUILDING = 4
    BARRIER = 5
    VEHICLE = 6
    PEDESTRIAN = 7
    EGO = 8
    OTHER = 9

    @property
    def bit(self) -> int:
        return 1 << int(self)


L = SemanticLabel

FREE_BIT = L.FREE.bit
DRIVABLE = L.DRIVABLE.bit
SIDEWALK = L.SIDEWALK.bit
VEGETATION = L.VEGETATION.bit
BUILDING = L.BUILDING.bit
BARRIER = L.BARRIER.bit
VEHICLE = L.VEHICLE.bit
PEDESTRIAN = L.PEDESTRIAN.bit
EGO = L.EGO.bit
OTHER = L.OTHER.bit

AGENT_BITS = VEHICLE | PEDESTRIAN
DYNAMIC_BITS = AGENT_BITS | EGO
STATIC_BITS = DRIVABLE | SIDEWALK | VEGETATION | BUILDING | BARRIER | OTHER
OBSTACLE_BITS = BUILDING | BARRIER | VEGETATION
NON_PERMISSIBLE_BITS = SIDEWALK | VEGETATION


def encode_labels(labels) -> int:
    """Pack an iterable of labels into a mask.  ``Free`` alone encodes to 0."""
    mask = 0
    for lab in labels:
        lab = SemanticLabel(lab)
        if lab is not L.FREE:
            mask |= lab.bit
    return mask


def decode_mask(mask: int) -> frozenset[SemanticLabel]:
    mask = int(mask)
    if mask >> 16:
        raise ValueError(f"label mask {mask:#x} exceeds 16 bits")
    if mask & FREE_BIT and mask != FREE_BIT:
        raise ValueError(f"mask {mask:#06x} mixes Free with occupied labels")
    return frozenset(lab for lab in SemanticLabel if mask & lab.bit)


def is_free(mask: int) -> bool:
    return int(mask) in (0, FREE_BIT)


def primary_label(mask: int) -> SemanticLabel:
    """Most salient label of a mask, used when a single colour/code is needed."""
    for lab in (L.EGO, L.PEDESTRIAN, L.VEHICLE, L.BUILDING, L.BARRIER,
                L.VEGETATION, L.SIDEWALK, L.DRIVABLE, L.OTHER):
        if int(mask) & lab.bit:
            return lab
    return L.FREE


@dataclass(frozen=True)
class GridGeometry:
    nx: int = 200
    ny: int = 200
    nz: int = 16
    voxel_size: float = 0.4
    origin: tuple[float, float, float] = (-40.0, -40.0, -1.0)

    def __post_init__(self):
        if min(self.nx, self.ny, self.nz) <= 0:
            raise ValueError("grid dimensions must be positive")
        if not (np.isfinite(self.voxel_size) and self.voxel_size > 0):
            raise ValueError(f"voxel_size must be positive, got {self.voxel_size}")
        if len(self.origin) != 3 or not np.all(np.isfinite(self.origin)):
            raise ValueError(f"origin must be 3 finite numbers, got {self.origin}")
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))
        object.__setattr__(self, "voxel_size", float(self.voxel_size))

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.nx, self.ny, self.nz)

    @property
    def size(self) -> int:
        return self.nx * self.ny * self.nz

    @property
    def upper(self) -> tuple[float, float, float]:
        vs = self.voxel_size
        return tuple(o + n * vs for o, n in zip(self.origin, self.shape))

    def centers(self, axis: int) -> np.ndarray:
        n = self.shape[axis]
        c = self.origin[axis] + self.voxel_size * (np.arange(n) + 0.5)
        return np.round(c, _CENTER_DECIMALS)

    def voxel_center(self, index) -> np.ndarray:
        idx = np.asarray(index, dtype=float)
        c = np.asarray(self.origin) + self.voxel_size * (idx + 0.5)
        return np.round(c, _CENTER_DECIMALS)

    def quantize(self, points: np.ndarray) -> np.ndarray:
        """Floor-quantise metric coordinates (..., d) onto the lattice; no bounds check."""
        pts = np.asarray(points, dtype=float)
        d = pts.shape[-1]
        rel = (pts - np.asarray(self.origin[:d])) / self.voxel_size
        return np.floor(rel + _QUANT_EPS).astype(np.int64)

    def same_vertical(self, other: "GridGeometry") -> bool:
        return (self.nz == other.nz and self.voxel_size == other.voxel_size
                and self.origin[2] == other.origin[2])

    def window(self, center_xy=(0.0, 0.0), half_size: float = 6.0) -> "GridGeometry":
        """Sub-lattice covering the square ``center ± half_size`` (clipped to the grid)."""
        vs = self.voxel_size
        lo = self.quantize(np.array([center_xy[0] - half_size, center_xy[1] - half_size]))
        hi = self.quantize(np.array([center_xy[0] + half_size, center_xy[1] + half_size]))
        i0 = int(np.clip(lo[0], 0, self.nx - 1))
        j0 = int(np.clip(lo[1], 0, self.ny - 1))
        i1 = int(np.clip(hi[0], 0, self.nx - 1))
        j1 = int(np.clip(hi[1], 0, self.ny - 1))
        origin = (round(self.origin[0] + vs * i0, _CENTER_DECIMALS),
                  round(self.origin[1] + vs * j0, _CENTER_DECIMALS),
                  self.origin[2])
        return GridGeometry(i1 - i0 + 1, j1 - j0 + 1, self.nz, vs, origin)

    def flat_index(self, ix, iy, iz):
        return np.asarray(ix) + self.nx * (np.asarray(iy) + self.ny * np.asarray(iz))

    def unflatten(self, flat) -> np.ndarray:
        flat = np.asarray(flat, dtype=np.int64)
        ix = flat % self.nx
        iy = (flat // self.nx) % self.ny
        iz = flat // (self.nx * self.ny)
        return np.stack([ix, iy, iz], axis=-1)

    def to_dict(self) -> dict:
        return {"nx": self.nx, "ny": self.ny, "nz": self.nz,
                "voxel_size": self.voxel_size, "origin": list(self.origin)}

    @classmethod
    def from_dict(cls, d: dict) -> "GridGeometry":
        return cls(int(d["nx"]), int(d["ny"]), int(d["nz"]),
                   float(d["voxel_size"]), tuple(d["origin"]))


DEFAULT_GEOMETRY = GridGeometry()


class SemanticGrid:
    """Immutable dense grid of label masks with shape ``(nx, ny, nz)``."""

    __slots__ = ("geometry", "data")

    def __init__(self, geometry: GridGeometry, data: np.ndarray | None = None):
        if data is None:
            data = np.zeros(geometry.shape, dtype=np.uint16)
        arr = np.array(data, dtype=np.uint16, copy=True)
        if arr.shape != geometry.shape:
            raise ValueError(f"data shape {arr.shape} != grid shape {geometry.shape}")
        arr.flags.writeable = False
        object.__setattr__(self, "geometry", geometry)
        object.__setattr__(self, "data", arr)

    def __setattr__(self, name, value):
        raise AttributeError("SemanticGrid is immutable")

    def __eq__(self, other):
        if not isinstance(other, SemanticGrid):
            return NotImplemented
        return self.geometry == other.geometry and np.array_equal(self.data, other.data)

    def __hash__(self):
        return hash((self.geometry, self.data.tobytes()))

    def __repr__(self):
        g = self.geometry
        return (f"SemanticGrid({g.nx}x{g.ny}x{g.nz}, vs={g.voxel_size}, "
                f"occupied={self.count_occupied()})")

    @property
    def shape(self):
        return self.geometry.shape

    def flat(self) -> np.ndarray:
        """Masks in x-fastest order."""
        return self.data.ravel(order="F")

    def occupied(self) -> np.ndarray:
        return (self.data & ~np.uint16(FREE_BIT)) != 0

    def count_occupied(self) -> int:
        return int(np.count_nonzero(self.occupied()))

    def has_bits(self, bits: int) -> np.ndarray:
        return (self.data & np.uint16(bits)) != 0

    def voxels_with(self, bits: int) -> np.ndarray:
        """Flat (x-fastest) indices of voxels carrying any of ``bits``."""
        return mask_to_voxels(self.has_bits(bits))

    def with_data(self, data: np.ndarray) -> "SemanticGrid":
        return SemanticGrid(self.geometry, data)

    def copy_data(self) -> np.ndarray:
        return np.array(self.data, copy=True)


def mask_to_voxels(mask: np.ndarray) -> np.ndarray:
    """Boolean ``(nx, ny, nz)`` array -> sorted flat x-fastest indices."""
    return np.flatnonzero(np.asarray(mask).ravel(order="F"))


def voxels_to_mask(voxels, geometry: GridGeometry) -> np.ndarray:
    m = np.zeros(geometry.size, dtype=bool)
    m[np.asarray(voxels, dtype=np.int64)] = True
    return m.reshape(geometry.shape, order="F")


def world_to_voxel(grid: SemanticGrid | GridGeometry, point) -> tuple[int, int, int] | None:
    geom = grid.geometry if isinstance(grid, SemanticGrid) else grid
    p = np.asarray(point, dtype=float)
    if p.shape != (3,) or not np.all(np.isfinite(p)):
        raise ValueError(f"point must be 3 finite coordinates, got {point!r}")
    idx = geom.quantize(p)
    if np.any(idx < 0) or np.any(idx >= np.asarray(geom.shape)):
        return None
    return tuple(int(i) for i in idx)


def label_set_at(grid: SemanticGrid, voxel) -> frozenset[SemanticLabel]:
    ix, iy, iz = (int(v) for v in voxel)
    g = grid.geometry
    if not (0 <= ix < g.nx and 0 <= iy < g.ny and 0 <= iz < g.nz):
        raise IndexError(f"voxel {voxel} outside grid {g.shape}")
    return decode_mask(int(grid.data[ix, iy, iz]))
