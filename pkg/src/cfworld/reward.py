"""Reward engine over 4D occupancy forecasts.

Safety components are returned as non-negative severities; the signed weights
in :class:`RewardConfig` turn them into penalties exactly once, in
:func:`total_reward`.  The kernels accept arbitrary leading batch dimensions
so a whole GRPO group is scored in one pass.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .geometry import Pose2D, Trajectory
from .grid import BUILDING, DRIVABLE, EGO, NON_PERMISSIBLE_BITS, GridGeometry


@dataclass(frozen=True)
class RewardConfig:
    w_coll: float = -20.0
    w_off: float = -10.0
    w_clr: float = -15.0
    w_stab: float = -2.0
    w_prog: float = 1.0
    w_vel: float = 0.5
    c_base: float = 1.0
    c_iou: float = 1.0
    bubble_height: float = 1.0
    v_target: float = 5.0
    route: tuple | None = None   # polyline of (x, y); None -> straight line along the start heading

    def __post_init__(self):
        for name in ("w_coll", "w_off", "w_clr", "w_stab"):
            if getattr(self, name) > 0:
                raise ValueError(f"{name} is a penalty weight and must be <= 0")
        for name in ("w_prog", "w_vel"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} is a task weight and must be >= 0")
        if self.bubble_height < 0 or self.c_base < 0 or self.c_iou < 0:
            raise ValueError("bubble_height, c_base and c_iou must be non-negative")
        if self.route is not None:
            route = tuple(tuple(float(v) for v in p) for p in self.route)
            if len(route) == 0:
                raise ValueError("route must contain at least one point")
            object.__setattr__(self, "route", route)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["route"] = None if self.route is None else [list(p) for p in self.route]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RewardConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown reward config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "RewardConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def replace(self, **changes) -> "RewardConfig":
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d.update(changes)
        return RewardConfig(**d)


COMPONENTS = ("coll", "offroad", "clearance", "stability", "progress", "velocity")
_WEIGHT = {"coll": "w_coll", "offroad": "w_off", "clearance": "w_clr",
           "stability": "w_stab", "progress": "w_prog", "velocity": "w_vel"}


@dataclass(frozen=True)
class RewardBreakdown:
    coll: float
    offroad: float
    clearance: float
    stability: float
    progress: float
    velocity: float
    total: float
    diagnostics: dict = field(default_factory=dict)

    @classmethod
    def combine(cls, cfg: RewardConfig, diagnostics=None, **parts) -> "RewardBreakdown":
        total = weighted_total(cfg, parts)
        return cls(**{k: float(parts[k]) for k in COMPONENTS}, total=float(total),
                   diagnostics=dict(diagnostics or {}))

    def recompute(self, cfg: RewardConfig) -> float:
        return float(weighted_total(cfg, {k: getattr(self, k) for k in COMPONENTS}))

    def to_dict(self) -> dict:
        return asdict(self)


def weighted_total(cfg: RewardConfig, parts):
    return sum(getattr(cfg, _WEIGHT[k]) * np.asarray(parts[k], dtype=float) for k in COMPONENTS)


# ---- set-level primitives -------------------------------------------------

def vc_iou(ego_mask, agent_mask) -> float:
    """Volumetric IoU of two voxel sets (index arrays, sets or boolean masks)."""
    a, b = _as_index_set(ego_mask), _as_index_set(agent_mask)
    union = len(a | b)
    return 0.0 if union == 0 else len(a & b) / union


def _as_index_set(m) -> set:
    if isinstance(m, (set, frozenset)):
        return set(m)
    arr = np.asarray(m)
    if arr.dtype == bool:
        return set(np.flatnonzero(arr.ravel(order="F")).tolist())
    return set(arr.ravel().tolist())


# ---- batched kernels over (..., K, nx, ny, nz) -----------------------------

def _ego_columns(labels):
    ego = (labels & np.uint16(EGO)) != 0
    cols = ego.any(axis=-1)
    nz = labels.shape[-1]
    iz_min = np.argmax(ego, axis=-1)
    iz_max = nz - 1 - np.argmax(ego[..., ::-1], axis=-1)
    return ego, cols, iz_min, iz_max


def collision_terms(labels, instance, n_agents: int, cfg: RewardConfig):
    """Per-frame, per-agent VC-IoU, shape ``(..., K, n_agents)``, and the summed severity."""
    ego = (labels & np.uint16(EGO)) != 0
    n_ego = ego.sum(axis=(-3, -2, -1))
    ious = np.zeros(labels.shape[:-3] + (n_agents,))
    for slot in range(n_agents):
        occ = instance == slot
        inter = (occ & ego).sum(axis=(-3, -2, -1))
        union = n_ego + occ.sum(axis=(-3, -2, -1)) - inter
        ious[..., slot] = np.where(union > 0, inter / np.maximum(union, 1), 0.0)
    sev = (cfg.c_base * (ious > 0) + cfg.c_iou * ious).sum(axis=(-2, -1))
    return ious, sev


def offroad_kernel(labels, ego_cols=None):
    """Footprint ground voxels (directly under the lowest Ego voxel) carrying Sidewalk or Vegetation."""
    _, cols, iz_min, _ = ego_cols or _ego_columns(labels)
    ground_idx = np.clip(iz_min - 1, 0, labels.shape[-1] - 1)
    ground = np.take_along_axis(labels, ground_idx[..., None], axis=-1)[..., 0]
    bad = cols & (iz_min >= 1) & ((ground & np.uint16(NON_PERMISSIBLE_BITS)) != 0)
    return bad.sum(axis=(-3, -2, -1))


def clearance_kernel(labels, geom: GridGeometry, bubble_height: float, ego_cols=None):
    """Building voxels in the ego footprint extruded upward from the ego top by ``bubble_height``."""
    _, cols, _, iz_max = ego_cols or _ego_columns(labels)
    zc = geom.centers(2)
    top = zc[iz_max] + 0.5 * geom.voxel_size
    dz = zc - top[..., None]
    bubble = cols[..., None] & (dz >= -1e-9) & (dz < bubble_height - 1e-9)
    hits = bubble & ((labels & np.uint16(BUILDING)) != 0)
    return hits.sum(axis=(-4, -3, -2, -1))


def stability_kernel(labels, geom: GridGeometry, ego_cols=None):
    """Sum over frames of the population variance of the highest Drivable z below each footprint column.

    Returns ``(severity, surface_missing)`` where the flag marks any frame with
    no drivable surface under the ego at all.
    """
    _, cols, iz_min, _ = ego_cols or _ego_columns(labels)
    nz = labels.shape[-1]
    below = np.arange(nz) < iz_min[..., None]
    drv = ((labels & np.uint16(DRIVABLE)) != 0) & below & cols[..., None]
    has = drv.any(axis=-1)
    top = nz - 1 - np.argmax(drv[..., ::-1], axis=-1)
    # integer voxel indices keep the variance exact; scale by voxel_size^2 afterwards
    z = np.where(has, top, 0).astype(float)
    n = has.sum(axis=(-2, -1))
    s1 = z.sum(axis=(-2, -1))
    s2 = (z * z).sum(axis=(-2, -1))
    safe_n = np.maximum(n, 1)
    var = np.where(n >= 2, np.maximum(s2 / safe_n - (s1 / safe_n) ** 2, 0.0), 0.0)
    var = var * geom.voxel_size ** 2
    return var.sum(axis=-1), (n == 0).any(axis=-1)


# ---- trajectory terms --------------------------------------------------------

def _route_array(route, start_xy, start_yaw) -> np.ndarray:
    if route is None:
        h = np.array([math.cos(start_yaw), math.sin(start_yaw)])
        s = np.asarray(start_xy, dtype=float)
        return np.stack([s - 1e3 * h, s + 1e3 * h])
    r = np.asarray(route, dtype=float).reshape(-1, 2)
    if len(r) == 0:
        raise ValueError("empty route")
    return r


def project_arclength(route: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Arc-length parameter of the closest point on ``route`` for each of ``points`` (..., 2)."""
    route = np.asarray(route, dtype=float)
    p = np.asarray(points, dtype=float)
    if len(route) == 1:
        return np.zeros(p.shape[:-1])
    a, b = route[:-1], route[1:]
    seg = b - a
    seg_len = np.linalg.norm(seg, axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])[:-1]
    denom = np.where(seg_len > 0, seg_len ** 2, 1.0)
    rel = p[..., None, :] - a
    t = np.clip((rel * seg).sum(-1) / denom, 0.0, 1.0)
    closest = a + t[..., None] * seg
    d2 = ((p[..., None, :] - closest) ** 2).sum(-1)
    best = np.argmin(d2, axis=-1)
    t_best = np.take_along_axis(t, best[..., None], axis=-1)[..., 0]
    return cum[best] + t_best * seg_len[best]


def progress_terms(xy, start_xy, start_yaw, route) -> np.ndarray:
    """Arc-length gained between the start pose and the final waypoint; ``xy`` is (..., K, 2)."""
    r = _route_array(route, start_xy, start_yaw)
    xy = np.asarray(xy, dtype=float)
    s0 = project_arclength(r, np.asarray(start_xy, dtype=float))
    s1 = project_arclength(r, xy[..., -1, :])
    return s1 - s0


def velocity_terms(xy, start_xy, dt, v_target) -> np.ndarray:
    xy = np.asarray(xy, dtype=float)
    start = np.broadcast_to(np.asarray(start_xy, dtype=float), xy.shape[:-2] + (1, 2))
    pts = np.concatenate([start, xy], axis=-2)
    v = np.linalg.norm(np.diff(pts, axis=-2), axis=-1) / dt
    return -np.abs(v - v_target).mean(axis=-1)


def progress_reward(traj: Trajectory, cfg: RewardConfig | None = None) -> float:
    cfg = cfg or RewardConfig()
    return float(progress_terms(traj.xy, traj.start.xy, traj.start.yaw, cfg.route))


def velocity_reward(traj: Trajectory, cfg: RewardConfig | None = None) -> float:
    cfg = cfg or RewardConfig()
    return float(velocity_terms(traj.xy, traj.start.xy, traj.dt, cfg.v_target))


# ---- forecast-level API ------------------------------------------------------

def collision_severity(result, cfg: RewardConfig | None = None) -> float:
    cfg = cfg or RewardConfig()
    return float(collision_terms(result.labels, result.instance, len(result.agent_ids), cfg)[1])


def offroad_severity(result, cfg: RewardConfig | None = None) -> int:
    return int(offroad_kernel(result.labels))


def clearance_severity(result, cfg: RewardConfig | None = None) -> int:
    cfg = cfg or RewardConfig()
    return int(clearance_kernel(result.labels, result.geometry, cfg.bubble_height))


def stability_severity(result, cfg: RewardConfig | None = None) -> float:
    return float(stability_kernel(result.labels, result.geometry)[0])


def stability_with_flag(result) -> tuple[float, bool]:
    sev, missing = stability_kernel(result.labels, result.geometry)
    return float(sev), bool(missing)


def reward_arrays(labels, instance, n_agents, geom, xy, start: "Pose2D", dt, cfg: RewardConfig) -> dict:
    """All components as arrays over the leading batch dimensions of ``labels``."""
    _, coll = collision_terms(labels, instance, n_agents, cfg)
    ego_cols = _ego_columns(labels)
    stab, missing = stability_kernel(labels, geom, ego_cols)
    out = {
        "coll": coll,
        "offroad": offroad_kernel(labels, ego_cols).astype(float),
        "clearance": clearance_kernel(labels, geom, cfg.bubble_height, ego_cols).astype(float),
        "stability": stab,
        "progress": progress_terms(xy, start.xy, start.yaw, cfg.route),
        "velocity": velocity_terms(xy, start.xy, dt, cfg.v_target),
    }
    out["total"] = weighted_total(cfg, out)
    out["surface_missing"] = missing
    return out


def total_reward(result, traj: Trajectory, cfg: RewardConfig | None = None) -> RewardBreakdown:
    cfg = cfg or RewardConfig()
    arr = reward_arrays(result.labels, result.instance, len(result.agent_ids), result.geometry,
                        traj.xy, traj.start, traj.dt, cfg)
    return RewardBreakdown.combine(cfg, {"surface_missing": bool(arr["surface_missing"])},
                                   **{k: arr[k] for k in COMPONENTS})


def group_rewards(batch, trajs, cfg: RewardConfig | None = None) -> dict:
    """Score a :class:`ForecastBatch` against its G trajectories; returns arrays of length G."""
    cfg = cfg or RewardConfig()
    trajs = list(trajs)
    xy = np.stack([t.xy for t in trajs])
    t0 = trajs[0]
    return reward_arrays(batch.labels, batch.instance, len(batch.agent_ids), batch.geometry,
                         xy, t0.start, t0.dt, cfg)
