"""Procedural street scenes used as the source dataset, plus the bundled hazard-ahead scenario.

Ground-plane convention: layer ``iz = 1`` (z in [-0.6, -0.2)) is the road
surface, the ego box starts at z = -0.2 and spans layers 2..5.  Ego speeds are
multiples of 0.8 m/s so each 0.5 s step is a whole number of voxels and the
recorded futures are exact lattice shifts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Pose2D, Trajectory
from .grid import (BARRIER, BUILDING, DRIVABLE, SIDEWALK, VEGETATION, GridGeometry,
                   SemanticGrid, SemanticLabel)
from .oracle import VeridicalOracle
from .reward import RewardConfig, collision_terms
from .scene import AgentBox, EgoState, Scenario, build_scenario

COMPACT_GEOMETRY = GridGeometry(100, 100, 16, 0.4, (-20.0, -20.0, -1.0))
HAZARD_GEOMETRY = GridGeometry(90, 50, 12, 0.4, (-8.0, -10.0, -1.0))
EGO_SPEEDS = (3.2, 4.0, 4.8, 5.6, 6.4)
GROUND = 1           # road / sidewalk surface layer
CURB = 2             # raised sidewalk layer
VEHICLE_EXTENT = (4.4, 2.0, 1.6)
PEDESTRIAN_EXTENT = (0.8, 0.8, 1.6)


class StaticMap:
    """Mutable builder for a static grid, addressed in metres along x/y."""

    def __init__(self, geom: GridGeometry):
        self.geom = geom
        self.data = np.zeros(geom.shape, dtype=np.uint16)
        self._x = geom.centers(0)
        self._y = geom.centers(1)

    def region(self, x0=-np.inf, x1=np.inf, y0=-np.inf, y1=np.inf) -> np.ndarray:
        xs = (self._x >= x0) & (self._x < x1)
        ys = (self._y >= y0) & (self._y < y1)
        return xs[:, None] & ys[None, :]

    def paint(self, bits: int, z_layers, **bounds) -> "StaticMap":
        cols = self.region(**bounds)
        for iz in z_layers:
            self.data[..., iz][cols] |= np.uint16(bits)
        return self

    def grid(self) -> SemanticGrid:
        return SemanticGrid(self.geom, self.data)


@dataclass(frozen=True)
class StreetLayout:
    right_edge: float    # y of the right road edge (negative)
    left_edge: float     # y of the left road edge (positive)
    right_walk: float    # sidewalk widths
    left_walk: float


def street_map(geom: GridGeometry, layout: StreetLayout, rng: np.random.Generator) -> StaticMap:
    m = StaticMap(geom)
    top = geom.nz
    r0, l0 = layout.right_edge, layout.left_edge
    r1, l1 = r0 - layout.right_walk, l0 + layout.left_walk
    m.paint(DRIVABLE, [GROUND], y0=r0, y1=l0)
    m.paint(SIDEWALK, [GROUND, CURB], y0=r1, y1=r0)
    m.paint(SIDEWALK, [GROUND, CURB], y0=l0, y1=l1)
    x_lo, x_hi = geom.origin[0], geom.upper[0]
    # behind each sidewalk: alternating blocks of buildings and vegetation
    for side, (a, b) in (("right", (geom.origin[1], r1)), ("left", (l1, geom.upper[1]))):
        x = x_lo
        while x < x_hi:
            length = float(rng.choice([6.0, 8.0, 10.0, 12.0]))
            if rng.random() < 0.5:
                setback = float(rng.choice([0.0, 0.8, 1.6]))
                yb = (a, b - setback) if side == "right" else (a + setback, b)
                m.paint(VEGETATION, [GROUND], x0=x, x1=x + length, y0=a, y1=b)
                m.paint(BUILDING, range(GROUND, top), x0=x, x1=x + length, y0=yb[0], y1=yb[1])
            else:
                m.paint(VEGETATION, [GROUND], x0=x, x1=x + length, y0=a, y1=b)
                for _ in range(int(rng.integers(1, 4))):
                    sx = x + float(rng.uniform(0, length - 1.2))
                    sy = float(rng.uniform(a, b - 1.2)) if b - a > 1.2 else a
                    m.paint(VEGETATION, [CURB, CURB + 1], x0=sx, x1=sx + 1.2, y0=sy, y1=sy + 1.2)
            x += length
    # short barrier runs along the kerb
    for edge, sign in ((r0, -1.0), (l0, 1.0)):
        for _ in range(int(rng.integers(0, 3))):
            bx = float(rng.uniform(x_lo + 4, x_hi - 8))
            y_in = edge + sign * 0.4
            ya, yb = sorted((edge, y_in))
            m.paint(BARRIER, [CURB + 1, CURB + 2], x0=bx, x1=bx + float(rng.choice([2.0, 4.0])),
                    y0=ya, y1=yb)
    return m


def _random_agents(rng, layout: StreetLayout, ego_speed: float, geom: GridGeometry) -> list[AgentBox]:
    agents = []
    x_lo, x_hi = geom.origin[0] + 3, geom.upper[0] - 3
    lane_l = 0.5 * (1.0 + layout.left_edge)      # centre of the space left of the ego lane
    n = int(rng.integers(2, 6))
    for i in range(n):
        kind = rng.choice(["parked", "oncoming", "leading", "pedestrian", "pedestrian"])
        if kind == "parked":
            y = float(rng.choice([layout.right_edge + 1.0, layout.left_edge - 1.0]))
            if abs(y) < 2.2:
                y = layout.left_edge - 1.0
            agents.append(AgentBox(i, SemanticLabel.VEHICLE, (float(rng.uniform(4, 18)), y, 0.6),
                                   VEHICLE_EXTENT, 0.0, (0.0, 0.0)))
        elif kind == "oncoming":
            v = -float(rng.uniform(1.0, 3.0))
            agents.append(AgentBox(i, SemanticLabel.VEHICLE, (float(rng.uniform(8, 18)), lane_l, 0.6),
                                   VEHICLE_EXTENT, np.pi, (v, 0.0)))
        elif kind == "leading":
            v = ego_speed + float(rng.uniform(0.0, 1.0))
            agents.append(AgentBox(i, SemanticLabel.VEHICLE, (float(rng.uniform(8, 14)), 0.0, 0.6),
                                   VEHICLE_EXTENT, 0.0, (v, 0.0)))
        else:
            side = rng.random() < 0.5
            edge, width = ((layout.right_edge, -layout.right_walk) if side
                           else (layout.left_edge, layout.left_walk))
            y = edge + 0.5 * width
            v = float(rng.uniform(-1.4, 1.4)) if rng.random() < 0.7 else 0.0
            agents.append(AgentBox(i, SemanticLabel.PEDESTRIAN, (float(rng.uniform(2, 18)), y, 1.0),
                                   PEDESTRIAN_EXTENT, 0.0 if v >= 0 else np.pi, (v, 0.0)))
    return [a for a in agents if x_lo <= a.center[0] <= x_hi]


def random_scene(seed: int, geom: GridGeometry = COMPACT_GEOMETRY, K: int = 6, name: str | None = None) -> Scenario:
    """A straight street with kerbs, vegetation, buildings, barriers, vehicles and pedestrians.

    The recorded ego trajectory drives straight down its lane and never
    touches an agent (agents that would be hit are dropped).
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5CE4E]))
    layout = StreetLayout(
        right_edge=-float(rng.choice([2.0, 2.4, 2.8])),
        left_edge=float(rng.choice([5.2, 6.0, 6.8])),
        right_walk=float(rng.choice([2.4, 3.2, 4.0])),
        left_walk=float(rng.choice([2.4, 3.2, 4.0])),
    )
    static = street_map(geom, layout, rng).grid()
    speed = float(rng.choice(EGO_SPEEDS))
    ego = EgoState(Pose2D(0.0, 0.0, 0.0), speed=speed)
    agents = _random_agents(rng, layout, speed, geom)
    traj = Trajectory.constant_velocity(ego.pose, speed, K)
    base = build_scenario(static, [], ego, traj, K)
    res = VeridicalOracle(base.replace(agents=tuple(agents))).forecast(traj)
    ious, _ = collision_terms(res.labels, res.instance, len(agents), RewardConfig())
    safe = [a for a, hit in zip(agents, ious.max(axis=0) > 0) if not hit]
    safe = [AgentBox(j, a.label, a.center, a.extent, a.yaw, a.velocity) for j, a in enumerate(safe)]
    return build_scenario(static, safe, ego, traj, K, name=name or f"scene_{seed:04d}",
                          meta={"seed": int(seed), "layout": layout.__dict__})


def random_dataset(count: int, seed: int = 0, geom: GridGeometry = COMPACT_GEOMETRY) -> list[Scenario]:
    return [random_scene(seed * 100003 + i, geom, name=f"scene_{i:04d}") for i in range(count)]


HAZARD_ROAD = (-3.2, 6.8)


def hazard_ahead(car_y: float = -1.2) -> tuple[Scenario, RewardConfig]:
    """Stopped vehicle 10 m ahead, parked half into the ego lane; driving on at 4 m/s hits it.

    The car sits 1.2 m right of the lane centre, so a swerve of about a metre
    to the left clears it while staying on the road.

    Returns the scenario and the reward configuration it is meant to be
    trained with (route along +x, target speed 4 m/s).
    """
    geom = HAZARD_GEOMETRY
    m = StaticMap(geom)
    r0, l0 = HAZARD_ROAD
    m.paint(DRIVABLE, [GROUND], y0=r0, y1=l0)
    m.paint(SIDEWALK, [GROUND, CURB], y1=r0)
    m.paint(SIDEWALK, [GROUND, CURB], y0=l0)
    m.paint(BUILDING, range(GROUND, geom.nz), y1=r0 - 4.0)
    m.paint(VEGETATION, [GROUND], y0=l0 + 3.2)
    car = AgentBox(0, SemanticLabel.VEHICLE, (10.0, car_y, 0.6), VEHICLE_EXTENT, 0.0, (0.0, 0.0))
    ego = EgoState(Pose2D(0.0, 0.0, 0.0), speed=4.0)
    scenario = build_scenario(m.grid(), [car], ego, name="hazard_ahead",
                              meta={"description": "stopped vehicle partly blocking the ego lane"})
    cfg = RewardConfig(v_target=4.0, route=((-10.0, 0.0), (40.0, 0.0)))
    return scenario, cfg
