"""Vectorised voxel kernels: rigid resampling and oriented-box rasterisation.

Everything here works on batches of planar poses so a whole group of
trajectories can be rendered with a handful of numpy calls.  A pose array has
shape ``(..., 3)`` holding ``[x, y, yaw]`` and maps output-frame coordinates
into the source frame.
"""

from __future__ import annotations

import numpy as np

from .geometry import RigidTransform
from .grid import GridGeometry, SemanticGrid, mask_to_voxels

BOX_TOL = 1e-6


def as_pose_array(transforms) -> np.ndarray:
    if isinstance(transforms, RigidTransform):
        return np.array([transforms.dx, transforms.dy, transforms.yaw])
    return np.asarray(transforms, dtype=float)


def transformed_centers(out: GridGeometry, poses: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Column centres of ``out`` mapped through ``poses`` -> two ``(..., nx, ny)`` arrays."""
    poses = np.asarray(poses, dtype=float)
    cx = out.centers(0)[:, None]
    cy = out.centers(1)[None, :]
    x = poses[..., 0, None, None]
    y = poses[..., 1, None, None]
    c = np.cos(poses[..., 2])[..., None, None]
    s = np.sin(poses[..., 2])[..., None, None]
    X = c * cx - s * cy + x
    Y = s * cx + c * cy + y
    return X, Y


def gather_columns(src: SemanticGrid | np.ndarray, src_geom: GridGeometry,
                   X: np.ndarray, Y: np.ndarray, fill=0) -> np.ndarray:
    """Nearest-neighbour lookup of whole z-columns at metric positions ``(X, Y)``."""
    data = src.data if isinstance(src, SemanticGrid) else src
    vs = src_geom.voxel_size
    ix = np.floor((X - src_geom.origin[0]) / vs + 1e-9).astype(np.int64)
    iy = np.floor((Y - src_geom.origin[1]) / vs + 1e-9).astype(np.int64)
    valid = (ix >= 0) & (ix < src_geom.nx) & (iy >= 0) & (iy < src_geom.ny)
    np.clip(ix, 0, src_geom.nx - 1, out=ix)
    np.clip(iy, 0, src_geom.ny - 1, out=iy)
    out = data[ix, iy]
    out[~valid] = fill
    return out


def resample(grid: SemanticGrid, transform: RigidTransform,
             out_geometry: GridGeometry | None = None) -> SemanticGrid:
    """Output voxel ``v'`` takes the mask of the source voxel containing ``T(centre(v'))``.

    Labels are categorical, so this is nearest-neighbour lookup; voxels whose
    pre-image leaves the source grid become Free.
    """
    geom = grid.geometry
    out_geom = out_geometry or geom
    if not out_geom.same_vertical(geom):
        raise ValueError("resample only supports planar transforms between grids sharing z layout")
    if transform.is_identity() and out_geom == geom:
        return grid
    X, Y = transformed_centers(out_geom, as_pose_array(transform))
    return SemanticGrid(out_geom, gather_columns(grid, geom, X, Y))


def resample_many(data: np.ndarray, src_geom: GridGeometry, poses: np.ndarray,
                  out_geom: GridGeometry, fill=0) -> np.ndarray:
    """Resample one array (or a stack matching the leading pose dims) through many poses."""
    X, Y = transformed_centers(out_geom, poses)
    if data.ndim == 3:
        return gather_columns(data, src_geom, X, Y, fill)
    # one source per pose: gather with an explicit leading index
    vs = src_geom.voxel_size
    ix = np.floor((X - src_geom.origin[0]) / vs + 1e-9).astype(np.int64)
    iy = np.floor((Y - src_geom.origin[1]) / vs + 1e-9).astype(np.int64)
    valid = (ix >= 0) & (ix < src_geom.nx) & (iy >= 0) & (iy < src_geom.ny)
    np.clip(ix, 0, src_geom.nx - 1, out=ix)
    np.clip(iy, 0, src_geom.ny - 1, out=iy)
    lead = np.indices(ix.shape[:-2])
    lead = tuple(a[..., None, None] for a in lead)
    out = data[lead + (ix, iy)]
    out[~valid] = fill
    return out


def box_xy_mask(X: np.ndarray, Y: np.ndarray, cx, cy, yaw, length: float, width: float) -> np.ndarray:
    """Centre-inclusion test for an oriented rectangle.

    Half-open in box coordinates: ``-L/2 <= u < L/2`` (same for width), so a
    box aligned with the lattice covers exactly ``L / voxel_size`` cells even
    when its faces pass through voxel centres.
    """
    cx = np.asarray(cx, dtype=float)[..., None, None]
    cy = np.asarray(cy, dtype=float)[..., None, None]
    c = np.cos(np.asarray(yaw, dtype=float))[..., None, None]
    s = np.sin(np.asarray(yaw, dtype=float))[..., None, None]
    dx = X - cx
    dy = Y - cy
    u = c * dx + s * dy + 0.5 * length
    w = -s * dx + c * dy + 0.5 * width
    return (u >= -BOX_TOL) & (u < length - BOX_TOL) & (w >= -BOX_TOL) & (w < width - BOX_TOL)


def z_slab_mask(geom: GridGeometry, z_base: float, height: float) -> np.ndarray:
    zc = geom.centers(2) - z_base
    return (zc >= -BOX_TOL) & (zc < height - BOX_TOL)


def rasterize_mask(geom: GridGeometry, pose, extent, z_base: float) -> np.ndarray:
    """Boolean ``(nx, ny, nz)`` mask of voxels whose centres lie inside the box."""
    length, width, height = (float(v) for v in extent)
    if min(length, width, height) <= 0:
        raise ValueError(f"box extent must be positive, got {extent}")
    x, y, yaw = _pose_tuple(pose)
    X = geom.centers(0)[:, None]
    Y = geom.centers(1)[None, :]
    xy = box_xy_mask(X, Y, x, y, yaw, length, width)
    return xy[:, :, None] & z_slab_mask(geom, z_base, height)[None, None, :]


def rasterize_footprint(grid: SemanticGrid | GridGeometry, pose, extent, z_base: float) -> np.ndarray:
    """Sorted flat (x-fastest) indices of voxels whose centres fall inside the oriented box."""
    geom = grid.geometry if isinstance(grid, SemanticGrid) else grid
    return mask_to_voxels(rasterize_mask(geom, pose, extent, z_base))


def _pose_tuple(pose) -> tuple[float, float, float]:
    if hasattr(pose, "yaw"):
        return float(pose.x), float(pose.y), float(pose.yaw)
    x, y, yaw = pose
    return float(x), float(y), float(yaw)
