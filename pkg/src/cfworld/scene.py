"""Decomposed driving scenes: static map, dynamic agents, ego state, recorded futures."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .geometry import DT, Pose2D, Trajectory, V_MAX
from .grid import (AGENT_BITS, DRIVABLE, DYNAMIC_BITS, EGO, GridGeometry, PEDESTRIAN,
                   SemanticGrid, SemanticLabel, VEHICLE)
from .voxel import box_xy_mask, rasterize_mask, transformed_centers, gather_columns, z_slab_mask

DEFAULT_HORIZON = 6
EGO_EXTENT = (4.0, 2.0, 1.6)
EGO_Z_BASE = -0.2


class InvalidSceneError(ValueError):
    pass


@dataclass(frozen=True)
class AgentBox:
    id: int
    label: SemanticLabel
    center: tuple[float, float, float]
    extent: tuple[float, float, float]
    yaw: float = 0.0
    velocity: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        label = SemanticLabel(self.label)
        if label not in (SemanticLabel.VEHICLE, SemanticLabel.PEDESTRIAN):
            raise ValueError(f"agent label must be Vehicle or Pedestrian, got {label.name}")
        object.__setattr__(self, "label", label)
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))
        object.__setattr__(self, "extent", tuple(float(v) for v in self.extent))
        object.__setattr__(self, "velocity", tuple(float(v) for v in self.velocity))
        if min(self.extent) <= 0:
            raise ValueError(f"agent extent must be positive, got {self.extent}")
        if math.hypot(*self.velocity) > V_MAX:
            raise ValueError(f"agent speed exceeds {V_MAX} m/s")

    @property
    def z_base(self) -> float:
        return self.center[2] - 0.5 * self.extent[2]

    def position_at(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return np.asarray(self.center[:2]) + np.multiply.outer(t, np.asarray(self.velocity))

    def to_dict(self) -> dict:
        return {"id": self.id, "class": self.label.name.capitalize(), "center": list(self.center),
                "extent": list(self.extent), "yaw": self.yaw, "velocity": list(self.velocity)}

    @classmethod
    def from_dict(cls, d: dict) -> "AgentBox":
        return cls(int(d["id"]), SemanticLabel[d["class"].upper()], tuple(d["center"]),
                   tuple(d["extent"]), float(d.get("yaw", 0.0)), tuple(d.get("velocity", (0.0, 0.0))))


@dataclass(frozen=True)
class EgoState:
    pose: Pose2D = field(default_factory=Pose2D)
    extent: tuple[float, float, float] = EGO_EXTENT
    speed: float = 0.0
    z_base: float = EGO_Z_BASE

    def __post_init__(self):
        object.__setattr__(self, "extent", tuple(float(v) for v in self.extent))
        if min(self.extent) <= 0:
            raise ValueError("ego extent must be positive")
        if not (0.0 <= self.speed <= V_MAX):
            raise ValueError(f"ego speed must lie in [0, {V_MAX}], got {self.speed}")

    @property
    def heading(self) -> np.ndarray:
        return np.array([math.cos(self.pose.yaw), math.sin(self.pose.yaw)])

    def to_dict(self) -> dict:
        return {"pose": self.pose.to_list(), "extent": list(self.extent),
                "speed": self.speed, "z_base": self.z_base}

    @classmethod
    def from_dict(cls, d: dict) -> "EgoState":
        return cls(Pose2D(*d["pose"]), tuple(d.get("extent", EGO_EXTENT)),
                   float(d.get("speed", 0.0)), float(d.get("z_base", EGO_Z_BASE)))


def ego_stamp(geom: GridGeometry, ego: EgoState) -> np.ndarray:
    """Ego box at the origin of its own frame, as a boolean voxel mask."""
    return rasterize_mask(geom, (0.0, 0.0, 0.0), ego.extent, ego.z_base)


def render_frames(static: SemanticGrid, agents, ego: EgoState | None, poses: np.ndarray,
                  times: np.ndarray, out_geom: GridGeometry | None = None):
    """Render ego-frame occupancy for a batch of ego poses.

    ``poses`` has shape ``(..., 3)`` (ego pose in the static grid's frame) and
    ``times`` matches its leading shape.  Returns ``(labels, instance)`` where
    ``instance`` holds the index of the agent occupying each voxel (-1 if none;
    the first agent listed wins on overlap, keeping instance masks disjoint).
    """
    out_geom = out_geom or static.geometry
    poses = np.asarray(poses, dtype=float)
    times = np.broadcast_to(np.asarray(times, dtype=float), poses.shape[:-1])
    X, Y = transformed_centers(out_geom, poses)
    labels = gather_columns(static, static.geometry, X, Y)
    instance = np.full(labels.shape, -1, dtype=np.int16)
    for slot, agent in enumerate(agents):
        pos = agent.position_at(times)
        xy = box_xy_mask(X, Y, pos[..., 0], pos[..., 1], agent.yaw, agent.extent[0], agent.extent[1])
        if not xy.any():
            continue
        inside = xy[..., None] & z_slab_mask(out_geom, agent.z_base, agent.extent[2])
        labels[inside] |= np.uint16(agent.label.bit)
        free = inside & (instance < 0)
        instance[free] = slot
    if ego is not None:
        labels |= np.where(ego_stamp(out_geom, ego), np.uint16(EGO), np.uint16(0))
    return labels, instance


def record_futures(static: SemanticGrid, agents, ego: EgoState, traj: Trajectory) -> tuple[SemanticGrid, ...]:
    """Ego-frame future grids along ``traj`` with agents at constant velocity."""
    labels, _ = render_frames(static, agents, ego, traj.pose_array(), traj.times)
    return tuple(SemanticGrid(static.geometry, labels[k]) for k in range(len(traj)))


@dataclass(frozen=True, eq=False)
class Scenario:
    static_grid: SemanticGrid
    agents: tuple[AgentBox, ...]
    ego: EgoState
    original_traj: Trajectory
    original_futures: tuple[SemanticGrid, ...]
    name: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "agents", tuple(self.agents))
        object.__setattr__(self, "original_futures", tuple(self.original_futures))
        if len(self.original_futures) != len(self.original_traj):
            raise ValueError(f"{len(self.original_futures)} future grids for a "
                             f"{len(self.original_traj)}-step trajectory")
        if np.any(self.static_grid.data & np.uint16(DYNAMIC_BITS)):
            raise ValueError("static grid carries Ego/Vehicle/Pedestrian bits")
        for g in self.original_futures:
            if g.geometry != self.static_grid.geometry:
                raise ValueError("future grids must share the static grid geometry")
        ids = [a.id for a in self.agents]
        if len(set(ids)) != len(ids):
            raise ValueError("agent ids must be unique")

    @property
    def horizon(self) -> int:
        return len(self.original_traj)

    @property
    def geometry(self) -> GridGeometry:
        return self.static_grid.geometry

    @property
    def dt(self) -> float:
        return self.original_traj.dt

    def agent(self, agent_id: int) -> AgentBox:
        for a in self.agents:
            if a.id == agent_id:
                return a
        raise KeyError(agent_id)

    def replace(self, **changes) -> "Scenario":
        fields = dict(static_grid=self.static_grid, agents=self.agents, ego=self.ego,
                      original_traj=self.original_traj, original_futures=self.original_futures,
                      name=self.name, meta=dict(self.meta))
        fields.update(changes)
        return Scenario(**fields)


def build_scenario(static: SemanticGrid, agents, ego: EgoState, traj: Trajectory | None = None,
                   K: int = DEFAULT_HORIZON, dt: float = DT, name: str = "", meta=None) -> Scenario:
    """Scenario whose recorded futures are rendered by constant-velocity playback."""
    if traj is None:
        traj = Trajectory.constant_velocity(ego.pose, ego.speed, K, dt)
    futures = record_futures(static, agents, ego, traj)
    return Scenario(static, tuple(agents), ego, traj, futures, name, dict(meta or {}))


def cluster_agents(grid: SemanticGrid, first_id: int = 0) -> list[AgentBox]:
    """Axis-aligned boxes around 26-connected blobs of Vehicle/Pedestrian voxels."""
    g = grid.geometry
    dyn = grid.has_bits(AGENT_BITS)
    labelled, n = ndimage.label(dyn, structure=np.ones((3, 3, 3), dtype=bool))
    boxes = []
    for i, sl in enumerate(ndimage.find_objects(labelled)):
        blob = labelled[sl] == i + 1
        masks = grid.data[sl][blob]
        n_veh = np.count_nonzero(masks & VEHICLE)
        n_ped = np.count_nonzero(masks & PEDESTRIAN)
        label = SemanticLabel.VEHICLE if n_veh >= n_ped else SemanticLabel.PEDESTRIAN
        lo = np.array([s.start for s in sl], dtype=float)
        hi = np.array([s.stop for s in sl], dtype=float)
        origin = np.asarray(g.origin)
        center = origin + g.voxel_size * 0.5 * (lo + hi)
        extent = g.voxel_size * (hi - lo)
        boxes.append(AgentBox(first_id + i, label, tuple(center), tuple(extent)))
    return boxes


def decompose(labeled_grid: SemanticGrid, boxes, ego: EgoState, original_traj: Trajectory | None = None,
              original_futures=None, K: int = DEFAULT_HORIZON, name: str = "") -> Scenario:
    """Split a labelled frame into a static map, agent boxes and the ego state.

    Without boxes, dynamic voxels are clustered by 26-connected flood fill and
    fitted with axis-aligned boxes (velocity unknown, so zero).
    """
    if not labeled_grid.has_bits(DRIVABLE).any():
        raise InvalidSceneError("scene has no Drivable voxels")
    boxes = list(boxes or [])
    if not boxes:
        boxes = cluster_agents(labeled_grid)
    static = labeled_grid.with_data(labeled_grid.data & np.uint16(~DYNAMIC_BITS & 0xFFFF))
    if original_futures is None:
        return build_scenario(static, boxes, ego, original_traj, K, name=name)
    if original_traj is None:
        original_traj = Trajectory.constant_velocity(ego.pose, ego.speed, len(original_futures))
    return Scenario(static, tuple(boxes), ego, original_traj, tuple(original_futures), name)
