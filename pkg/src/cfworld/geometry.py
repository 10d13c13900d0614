"""Planar poses, rigid transforms and timestamped ego trajectories."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

DT = 0.5
V_MAX = 30.0


def wrap_angle(a):
    """Map angles into (-pi, pi]."""
    w = np.mod(np.asarray(a, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    w = np.where(w == -np.pi, np.pi, w)
    return float(w) if np.ndim(w) == 0 else w


@dataclass(frozen=True)
class Pose2D:
    x: float = 0.0
    y: float = 0.0
    yaw: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.yaw)):
            raise ValueError(f"non-finite pose {self}")
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def as_transform(self) -> "RigidTransform":
        """Transform taking coordinates in this pose's frame to the parent frame."""
        return RigidTransform(self.yaw, self.x, self.y)

    def to_list(self) -> list[float]:
        return [self.x, self.y, self.yaw]


@dataclass(frozen=True)
class RigidTransform:
    """``p -> R(yaw) p + (dx, dy)`` in the plane; z passes through unchanged."""

    yaw: float = 0.0
    dx: float = 0.0
    dy: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.yaw, self.dx, self.dy)):
            raise ValueError(f"non-finite transform {self}")

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(0.0, 0.0, 0.0)

    @classmethod
    def about_point(cls, yaw: float, center_xy) -> "RigidTransform":
        """Rotation by ``yaw`` about ``center_xy``."""
        c, s = math.cos(yaw), math.sin(yaw)
        cx, cy = float(center_xy[0]), float(center_xy[1])
        return cls(yaw, cx - (c * cx - s * cy), cy - (s * cx + c * cy))

    @classmethod
    def between(cls, target: Pose2D, source: Pose2D) -> "RigidTransform":
        """Maps coordinates in ``source``'s frame into ``target``'s frame."""
        return target.as_transform().inverse().compose(source.as_transform())

    def matrix(self) -> np.ndarray:
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return np.array([[c, -s, self.dx], [s, c, self.dy], [0.0, 0.0, 1.0]])

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        out = np.array(p, copy=True)
        out[..., 0] = c * p[..., 0] - s * p[..., 1] + self.dx
        out[..., 1] = s * p[..., 0] + c * p[..., 1] + self.dy
        return out

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """``self ∘ other``: apply ``other`` first."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return RigidTransform(
            self.yaw + other.yaw,
            c * other.dx - s * other.dy + self.dx,
            s * other.dx + c * other.dy + self.dy,
        )

    def inverse(self) -> "RigidTransform":
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return RigidTransform(-self.yaw, -(c * self.dx + s * self.dy), s * self.dx - c * self.dy)

    def is_identity(self) -> bool:
        return self.yaw == 0.0 and self.dx == 0.0 and self.dy == 0.0


def heading_from_displacements(xy: np.ndarray, start_xy, start_yaw: float) -> np.ndarray:
    """Yaw facing each step's displacement; a zero step keeps the previous yaw."""
    prev = np.vstack([np.asarray(start_xy, dtype=float)[None, :], xy[:-1]])
    d = xy - prev
    yaw = np.empty(len(xy))
    last = start_yaw
    for k, (dx, dy) in enumerate(d):
        if dx * dx + dy * dy > 1e-18:
            last = math.atan2(dy, dx)
        yaw[k] = last
    return wrap_angle(yaw) if len(yaw) else yaw


@dataclass(frozen=True, eq=False)
class Trajectory:
    """K future ego poses at ``t0 + dt * (1..K)``, anchored at a start pose at ``t0``.

    Positions are in the scenario's current ego frame.  The start pose is the
    ego state at ``t0`` and is needed for the first step's speed and for
    progress along a route.
    """

    xy: np.ndarray
    yaw: np.ndarray
    start: Pose2D = field(default_factory=Pose2D)
    dt: float = DT
    t0: float = 0.0

    def __post_init__(self):
        xy = np.array(self.xy, dtype=float).reshape(-1, 2)
        yaw = np.array(self.yaw, dtype=float).reshape(-1)
        if len(xy) != len(yaw):
            raise ValueError("xy and yaw lengths differ")
        if not (np.all(np.isfinite(xy)) and np.all(np.isfinite(yaw))):
            raise ValueError("trajectory contains non-finite values")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError(f"dt must be positive, got {self.dt}")
        xy.flags.writeable = False
        yaw = wrap_angle(yaw) if len(yaw) else yaw
        yaw = np.asarray(yaw, dtype=float).reshape(-1)
        yaw.flags.writeable = False
        object.__setattr__(self, "xy", xy)
        object.__setattr__(self, "yaw", yaw)

    @classmethod
    def from_positions(cls, xy, start: Pose2D | None = None, dt: float = DT, t0: float = 0.0):
        start = start or Pose2D()
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        return cls(xy, heading_from_displacements(xy, start.xy, start.yaw), start, dt, t0)

    @classmethod
    def constant_velocity(cls, start: Pose2D, speed: float, K: int, dt: float = DT):
        k = np.arange(1, K + 1)[:, None]
        h = np.array([math.cos(start.yaw), math.sin(start.yaw)])
        xy = start.xy[None, :] + speed * dt * k * h[None, :]
        return cls(xy, np.full(K, start.yaw), start, dt)

    def __len__(self):
        return len(self.xy)

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (self.start == other.start and self.dt == other.dt and self.t0 == other.t0
                and np.array_equal(self.xy, other.xy) and np.array_equal(self.yaw, other.yaw))

    @property
    def horizon(self) -> int:
        return len(self.xy)

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(1, self.horizon + 1)

    @property
    def poses(self) -> list[Pose2D]:
        return [Pose2D(x, y, a) for (x, y), a in zip(self.xy, self.yaw)]

    def pose_array(self) -> np.ndarray:
        """(K, 3) array of ``[x, y, yaw]``."""
        return np.column_stack([self.xy, self.yaw])

    def positions_with_start(self) -> np.ndarray:
        return np.vstack([self.start.xy[None, :], self.xy])

    def step_distances(self) -> np.ndarray:
        return np.linalg.norm(np.diff(self.positions_with_start(), axis=0), axis=1)

    def speeds(self) -> np.ndarray:
        return self.step_distances() / self.dt

    def is_plausible(self, v_max: float = V_MAX) -> bool:
        return bool(np.all(self.step_distances() <= v_max * self.dt + 1e-9))

    def check_plausible(self, v_max: float = V_MAX) -> None:
        if not self.is_plausible(v_max):
            raise ValueError(
                f"step displacement {self.step_distances().max():.3f} m exceeds "
                f"{v_max} m/s * {self.dt} s")

    def with_positions(self, xy) -> "Trajectory":
        return Trajectory.from_positions(xy, self.start, self.dt, self.t0)

    def to_dict(self) -> dict:
        return {
            "dt": self.dt,
            "t0": self.t0,
            "start": self.start.to_list(),
            "waypoints": [[float(t), float(x), float(y), float(a)]
                          for t, (x, y), a in zip(self.times, self.xy, self.yaw)],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Trajectory":
        wp = np.asarray(d["waypoints"], dtype=float).reshape(-1, 4)
        dt = float(d.get("dt", DT))
        t0 = float(d.get("t0", 0.0))
        expected = t0 + dt * np.arange(1, len(wp) + 1)
        if len(wp) and not np.allclose(wp[:, 0], expected, atol=1e-9):
            raise ValueError("waypoint timestamps are not uniformly spaced by dt")
        return cls(wp[:, 1:3], wp[:, 3], Pose2D(*d.get("start", (0.0, 0.0, 0.0))), dt, t0)
