"""Point-cloud exports of occupancy grids: ASCII PLY and CSV, one point per occupied voxel."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .grid import SemanticGrid, SemanticLabel

FORMATS = ("ply", "csv")

# priority order for picking one code per voxel; matches grid.primary_label
_PRIORITY = (SemanticLabel.EGO, SemanticLabel.PEDESTRIAN, SemanticLabel.VEHICLE, SemanticLabel.BUILDING,
             SemanticLabel.BARRIER, SemanticLabel.VEGETATION, SemanticLabel.SIDEWALK,
             SemanticLabel.DRIVABLE, SemanticLabel.OTHER)

PALETTE = {
    SemanticLabel.FREE: (0, 0, 0),
    SemanticLabel.DRIVABLE: (128, 64, 128),
    SemanticLabel.SIDEWALK: (244, 35, 232),
    SemanticLabel.VEGETATION: (107, 142, 35),
    SemanticLabel.BUILDING: (70, 70, 70),
    SemanticLabel.BARRIER: (190, 153, 153),
    SemanticLabel.VEHICLE: (0, 0, 142),
    SemanticLabel.PEDESTRIAN: (220, 20, 60),
    SemanticLabel.EGO: (255, 200, 0),
    SemanticLabel.OTHER: (150, 150, 150),
}


class UnsupportedFormatError(ValueError):
    pass


def primary_codes(data: np.ndarray) -> np.ndarray:
    """Vectorised :func:`grid.primary_label` over a mask array."""
    data = np.asarray(data, dtype=np.uint16)
    out = np.zeros(data.shape, dtype=np.int64)
    done = np.zeros(data.shape, dtype=bool)
    for lab in _PRIORITY:
        hit = ~done & ((data & np.uint16(lab.bit)) != 0)
        out[hit] = int(lab)
        done |= hit
    return out


def occupied_points(grid: SemanticGrid) -> tuple[np.ndarray, np.ndarray]:
    """Centres ``(N, 3)`` and label codes ``(N,)`` of occupied voxels, in x-fastest order."""
    geom = grid.geometry
    occ = grid.occupied()
    idx = np.flatnonzero(occ.ravel(order="F"))
    ix, iy, iz = np.unravel_index(idx, geom.shape, order="F")
    xyz = np.stack([geom.centers(0)[ix], geom.centers(1)[iy], geom.centers(2)[iz]], axis=1)
    codes = primary_codes(grid.data[ix, iy, iz])
    return xyz, codes


def write_ply(path, grid: SemanticGrid) -> Path:
    xyz, codes = occupied_points(grid)
    path = Path(path)
    lines = ["ply", "format ascii 1.0", f"element vertex {len(codes)}",
             "property float x", "property float y", "property float z",
             "property uchar red", "property uchar green", "property uchar blue",
             "property uchar label", "end_header"]
    for (x, y, z), c in zip(xyz, codes):
        r, g, b = PALETTE[SemanticLabel(int(c))]
        lines.append(f"{x:.4f} {y:.4f} {z:.4f} {r} {g} {b} {int(c)}")
    path.write_text("\n".join(lines) + "\n")
    return path


def write_csv(path, grid: SemanticGrid) -> Path:
    xyz, codes = occupied_points(grid)
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "z", "label"])
        for (x, y, z), c in zip(xyz, codes):
            w.writerow([f"{x:.4f}", f"{y:.4f}", f"{z:.4f}", int(c)])
    return path


def export_grid(grid: SemanticGrid, path, fmt: str) -> Path:
    if fmt not in FORMATS:
        raise UnsupportedFormatError(f"unsupported export format {fmt!r}; expected one of {FORMATS}")
    return write_ply(path, grid) if fmt == "ply" else write_csv(path, grid)


def read_ply_vertex_count(path) -> int:
    for line in Path(path).read_text().splitlines():
        if line.startswith("element vertex"):
            return int(line.split()[-1])
        if line == "end_header":
            break
    raise ValueError(f"{path} has no vertex element")
