"""Deterministic stand-ins for a learned occupancy world model.

``VeridicalOracle`` forecasts what really happens when the ego follows a
commanded trajectory: static structure is carried into each future ego frame,
agents move at constant velocity and the ego box is stamped at the frame
origin.  Overlapping stamps become multi-label voxels, so collisions stay
visible.

``OptimisticOracle`` reproduces the failure mode of models trained on safe data
only: agents that would touch the ego vanish, and whatever lies under and
inside the ego footprint is flattened into road.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import Trajectory
from .grid import (DRIVABLE, DYNAMIC_BITS, EGO, STATIC_BITS, GridGeometry,
                   SemanticGrid, mask_to_voxels)
from .gridio import write_grid
from .scene import Scenario, render_frames


class HorizonMismatchError(ValueError):
    pass


class EgoVanishedError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ForecastResult:
    """K ego-frame grids plus per-voxel agent instance slots."""

    geometry: GridGeometry
    labels: np.ndarray          # (K, nx, ny, nz) uint16
    instance: np.ndarray        # (K, nx, ny, nz) int16, slot into agent_ids or -1
    agent_ids: tuple[int, ...]

    def __post_init__(self):
        for arr in (self.labels, self.instance):
            arr.flags.writeable = False

    @property
    def horizon(self) -> int:
        return self.labels.shape[0]

    @property
    def frames(self) -> list[SemanticGrid]:
        return [SemanticGrid(self.geometry, f) for f in self.labels]

    @property
    def ego_masks(self) -> list[np.ndarray]:
        return [mask_to_voxels(f & np.uint16(EGO)) for f in self.labels]

    @property
    def agent_masks(self) -> list[dict[int, np.ndarray]]:
        out = []
        for inst in self.instance:
            frame = {}
            for slot, aid in enumerate(self.agent_ids):
                vox = mask_to_voxels(inst == slot)
                if len(vox):
                    frame[aid] = vox
            out.append(frame)
        return out

    def __eq__(self, other):
        if not isinstance(other, ForecastResult):
            return NotImplemented
        return (self.geometry == other.geometry and self.agent_ids == other.agent_ids
                and np.array_equal(self.labels, other.labels)
                and np.array_equal(self.instance, other.instance))

    def save(self, out_dir) -> Path:
        """K grid blobs plus a JSON sidecar of run-length encoded ego/agent masks."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = []
        for k, grid in enumerate(self.frames):
            paths.append(write_grid(out_dir / f"frame_{k:02d}.iocc", grid).name)
        sidecar = {
            "version": 1,
            "horizon_k": self.horizon,
            "geometry": self.geometry.to_dict(),
            "frame_paths": paths,
            "ego_masks": [run_lengths(m) for m in self.ego_masks],
            "agent_masks": [{str(aid): run_lengths(v) for aid, v in frame.items()}
                            for frame in self.agent_masks],
        }
        path = out_dir / "forecast.json"
        path.write_text(json.dumps(sidecar, indent=1, sort_keys=True))
        return path


@dataclass(frozen=True, eq=False)
class ForecastBatch:
    """Forecasts for a group of trajectories; arrays carry a leading group axis."""

    geometry: GridGeometry
    labels: np.ndarray          # (G, K, nx, ny, nz)
    instance: np.ndarray
    agent_ids: tuple[int, ...]

    def __len__(self):
        return self.labels.shape[0]

    def __getitem__(self, i) -> ForecastResult:
        return ForecastResult(self.geometry, self.labels[i].copy(), self.instance[i].copy(), self.agent_ids)


def run_lengths(voxels: np.ndarray) -> list[list[int]]:
    """Sorted flat indices -> ``[[start, length], ...]``."""
    v = np.asarray(voxels, dtype=np.int64)
    if v.size == 0:
        return []
    breaks = np.flatnonzero(np.diff(v) != 1) + 1
    starts = np.concatenate([[0], breaks])
    ends = np.concatenate([breaks, [v.size]])
    return [[int(v[s]), int(e - s)] for s, e in zip(starts, ends)]


def from_run_lengths(runs) -> np.ndarray:
    if not runs:
        return np.zeros(0, dtype=np.int64)
    return np.concatenate([np.arange(s, s + n, dtype=np.int64) for s, n in runs])


class VeridicalOracle:
    """Causally faithful forecaster for one scenario.

    ``roi_half_size`` restricts rendering to an ego-centred square window (in
    metres); rewards are unchanged as long as the window contains every agent
    that can touch the ego.
    """

    tag = "veridical"

    def __init__(self, scenario: Scenario, roi_half_size: float | None = None):
        self.scenario = scenario
        geom = scenario.geometry
        self.geometry = geom if roi_half_size is None else geom.window((0.0, 0.0), roi_half_size)
        self.agent_ids = tuple(a.id for a in scenario.agents)

    def _check(self, traj: Trajectory):
        if len(traj) != self.scenario.horizon:
            raise HorizonMismatchError(
                f"trajectory has {len(traj)} steps, scenario horizon is {self.scenario.horizon}")

    def _render(self, poses: np.ndarray, times: np.ndarray):
        sc = self.scenario
        return render_frames(sc.static_grid, sc.agents, sc.ego, poses, times, self.geometry)

    def _post(self, labels: np.ndarray, instance: np.ndarray):
        return labels, instance

    def forecast(self, traj: Trajectory) -> ForecastResult:
        self._check(traj)
        labels, instance = self._render(traj.pose_array(), traj.times)
        labels, instance = self._post(labels[None], instance[None])
        return ForecastResult(self.geometry, labels[0], instance[0], self.agent_ids)

    def forecast_group(self, trajs) -> ForecastBatch:
        trajs = list(trajs)
        for t in trajs:
            self._check(t)
        poses = np.stack([t.pose_array() for t in trajs])
        times = np.stack([t.times for t in trajs])
        labels, instance = self._post(*self._render(poses, times))
        return ForecastBatch(self.geometry, labels, instance, self.agent_ids)

    __call__ = forecast


class OptimisticOracle(VeridicalOracle):
    """Veridical forecast edited to hide the consequences of unsafe driving."""

    tag = "optimistic"

    def _post(self, labels, instance):
        labels = labels.copy()
        instance = instance.copy()
        apply_optimistic_bias(labels, instance, self.scenario.agents)
        return labels, instance


def apply_optimistic_bias(labels: np.ndarray, instance: np.ndarray, agents) -> np.ndarray:
    """In-place edit of ``(..., K, nx, ny, nz)`` forecasts.

    Returns a boolean ``(..., n_agents)`` array flagging deleted agents.
    """
    ego = (labels & np.uint16(EGO)) != 0
    ego_cols = ego.any(axis=-1)
    lead = labels.shape[:-4]
    deleted = np.zeros(lead + (len(agents),), dtype=bool)
    for slot, agent in enumerate(agents):
        occ = instance == slot
        hit = (occ.any(axis=-1) & ego_cols).any(axis=(-3, -2, -1))
        if not hit.any():
            continue
        deleted[..., slot] = hit
        kill = occ & hit[(...,) + (None,) * 4]
        labels[kill] &= np.uint16(~agent.label.bit & 0xFFFF)
        instance[kill] = -1

    nz = labels.shape[-1]
    iz_min = np.argmax(ego, axis=-1)
    zidx = np.arange(nz)
    # ground voxel directly under the lowest ego voxel becomes road
    ground = iz_min - 1
    has_ground = ego_cols & (ground >= 0)
    g_idx = np.clip(ground, 0, nz - 1)[..., None]
    g = np.take_along_axis(labels, g_idx, axis=-1)[..., 0]
    non_drivable = (g & np.uint16(STATIC_BITS & ~DRIVABLE)) != 0
    relabel = has_ground & non_drivable
    new_g = np.where(relabel, (g & np.uint16(DYNAMIC_BITS)) | np.uint16(DRIVABLE), g)
    np.put_along_axis(labels, g_idx, new_g[..., None], axis=-1)
    # static obstacles inside and above the ego body vanish
    above = ego_cols[..., None] & (zidx >= iz_min[..., None])
    labels[above] &= np.uint16(~STATIC_BITS & 0xFFFF)
    return deleted


def forecast_veridical(scenario: Scenario, traj: Trajectory, roi_half_size=None) -> ForecastResult:
    return VeridicalOracle(scenario, roi_half_size).forecast(traj)


def forecast_optimistic(scenario: Scenario, traj: Trajectory, roi_half_size=None) -> ForecastResult:
    return OptimisticOracle(scenario, roi_half_size).forecast(traj)


ORACLES = {"veridical": VeridicalOracle, "optimistic": OptimisticOracle}


def ego_fidelity(result: ForecastResult, commanded: Trajectory, weights=None) -> float:
    """Weighted squared distance between the predicted ego centroid and the commanded pose.

    Frames are ego-centred, so each centroid is mapped back into the commanded
    trajectory's frame before comparison.
    """
    K = result.horizon
    if len(commanded) != K:
        raise HorizonMismatchError(f"{len(commanded)} commanded steps vs {K} frames")
    w = np.ones(K) if weights is None else np.asarray(weights, dtype=float)
    geom = result.geometry
    cx, cy = geom.centers(0), geom.centers(1)
    total = 0.0
    for k in range(K):
        cols = ((result.labels[k] & np.uint16(EGO)) != 0)
        n = np.count_nonzero(cols)
        if n == 0:
            raise EgoVanishedError(f"no Ego voxels in frame {k}")
        ix, iy, _ = np.nonzero(cols)
        centroid = np.array([cx[ix].mean(), cy[iy].mean()])
        pose = commanded.poses[k]
        c, s = np.cos(pose.yaw), np.sin(pose.yaw)
        world = np.array([c * centroid[0] - s * centroid[1] + pose.x,
                          s * centroid[0] + c * centroid[1] + pose.y])
        total += w[k] * float(np.sum((world - commanded.xy[k]) ** 2))
    return total
