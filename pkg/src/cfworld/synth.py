"""Counterfactual synthesis: failure targets, unsafe trajectories and re-expressed futures."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .geometry import DT, RigidTransform, Trajectory
from .grid import (DRIVABLE, EGO, NON_PERMISSIBLE_BITS, OBSTACLE_BITS,
                   SemanticGrid)
from .oracle import VeridicalOracle
from .reward import RewardConfig, collision_terms, offroad_kernel
from .scene import DEFAULT_HORIZON, EgoState, Scenario, ego_stamp
from .voxel import resample, z_slab_mask


class FailureMode(str, enum.Enum):
    OFFROAD = "OffRoad"
    STATIC_PENETRATION = "StaticPenetration"
    DYNAMIC_COLLISION = "DynamicCollision"

    @classmethod
    def parse(cls, value) -> "FailureMode":
        if isinstance(value, cls):
            return value
        for m in cls:
            if value in (m.value, m.name):
                return m
        raise ValueError(f"unknown failure mode {value!r}")


# curriculum mix, in the order used for largest-remainder rounding
MODE_WEIGHTS = {
    FailureMode.DYNAMIC_COLLISION: 0.4,
    FailureMode.STATIC_PENETRATION: 0.3,
    FailureMode.OFFROAD: 0.3,
}
MIXING_RATIO = (80, 20)


class ModeInfeasibleError(ValueError):
    pass


class NoAgentsError(ModeInfeasibleError):
    pass


class NoStaticObstacleError(ModeInfeasibleError):
    pass


class NoRoadBoundaryError(ModeInfeasibleError):
    pass


@dataclass(frozen=True)
class SynthParams:
    K: int = DEFAULT_HORIZON
    noise_sigma: float = 0.05
    step_speed_profile: tuple[float, ...] | None = None   # per-step distance; None -> ego speed * dt
    seed: int = 0
    dt: float = DT
    offroad_push: float = 1.0
    search_radius: float = 25.0
    candidate_slack: float = 2.0

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if not (self.noise_sigma >= 0):
            raise ValueError("noise_sigma must be >= 0")
        if self.step_speed_profile is not None:
            prof = tuple(float(v) for v in self.step_speed_profile)
            if len(prof) != self.K:
                raise ValueError(f"step_speed_profile needs {self.K} entries")
            if min(prof) < 0:
                raise ValueError("step distances must be >= 0")
            object.__setattr__(self, "step_speed_profile", prof)
        if self.candidate_slack < 0 or self.search_radius <= 0:
            raise ValueError("candidate_slack must be >= 0 and search_radius > 0")

    def step_distances(self, ego: EgoState) -> np.ndarray:
        if self.step_speed_profile is not None:
            return np.asarray(self.step_speed_profile)
        return np.full(self.K, ego.speed * self.dt)


@dataclass(frozen=True)
class Target:
    point: tuple[float, float]
    mode: FailureMode
    agent_id: int | None = None
    note: str = ""

    def to_dict(self) -> dict:
        return {"point": list(self.point), "mode": self.mode.value, "agent_id": self.agent_id}


# ---- kinematic blend -----------------------------------------------------------

def blend_weight(k, K: int):
    """gamma_k = (k / K)^2."""
    return (np.asarray(k, dtype=float) / K) ** 2


def blend_positions(p0, heading, target, step_dists, noise=None) -> np.ndarray:
    """Waypoints ``(1 - g_k) p_inertial(k) + g_k p_intercept(k) [+ noise_k]`` for k = 1..K."""
    p0 = np.asarray(p0, dtype=float)
    h = np.asarray(heading, dtype=float)
    target = np.asarray(target, dtype=float)
    step_dists = np.asarray(step_dists, dtype=float)
    K = len(step_dists)
    k = np.arange(1, K + 1, dtype=float)
    inertial = p0 + np.cumsum(step_dists)[:, None] * h
    intercept = p0 + (k / K)[:, None] * (target - p0)
    g = blend_weight(k, K)[:, None]
    xy = (1.0 - g) * inertial + g * intercept
    # g_K == 1: land on the target itself rather than the rounded p0 + (target - p0)
    xy[-1] = target
    if noise is not None:
        xy = xy + noise
    return xy


def synthesize_trajectory(ego: EgoState, target, params: SynthParams | None = None,
                          rng: np.random.Generator | None = None) -> Trajectory:
    params = params or SynthParams()
    p0 = ego.pose.xy
    target = np.asarray(target, dtype=float)
    if np.allclose(target, p0, atol=1e-12):
        raise ValueError("target coincides with the ego position")
    dists = params.step_distances(ego)
    h = ego.heading
    if ego.speed == 0.0 and params.step_speed_profile is None:
        # stationary ego: no historical heading, face the target
        h = (target - p0) / np.linalg.norm(target - p0)
    noise = None
    if params.noise_sigma > 0:
        rng = rng if rng is not None else np.random.default_rng(params.seed)
        noise = rng.normal(0.0, params.noise_sigma, size=(params.K, 2))
    xy = blend_positions(p0, h, target, dists, noise)
    return Trajectory.from_positions(xy, ego.pose, params.dt)


# ---- target selection ------------------------------------------------------------

def inertial_endpoint(ego: EgoState, params: SynthParams) -> np.ndarray:
    return ego.pose.xy + params.step_distances(ego).sum() * ego.heading


def _pick(rng, points: np.ndarray, ref: np.ndarray, slack: float) -> int:
    d = np.linalg.norm(points - ref, axis=1)
    near = np.flatnonzero(d <= d.min() + slack + 1e-9)
    return int(near[rng.integers(len(near))]) if len(near) > 1 else int(near[0])


def _column_centers(grid: SemanticGrid, ix, iy) -> np.ndarray:
    g = grid.geometry
    return np.column_stack([g.centers(0)[ix], g.centers(1)[iy]])


def offroad_candidates(scenario: Scenario, params: SynthParams):
    """Non-drivable columns bordering the road, with outward unit normals and push targets."""
    grid = scenario.static_grid
    drv = grid.has_bits(DRIVABLE).any(axis=-1)
    bad = grid.has_bits(NON_PERMISSIBLE_BITS).any(axis=-1) & ~drv
    nx, ny = drv.shape
    normal = np.zeros((nx, ny, 2))
    pad = np.pad(drv, 1)
    for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        # drivable neighbour at (i - dx, j - dy): the road lies behind, outward is +(dx, dy)
        behind = pad[1 - dx:1 - dx + nx, 1 - dy:1 - dy + ny]
        normal[behind] += (dx, dy)
    boundary = bad & (np.linalg.norm(normal, axis=-1) > 0)
    ix, iy = np.nonzero(boundary)
    if len(ix) == 0:
        return np.zeros((0, 2)), np.zeros((0, 2)), np.zeros((0, 2))
    n = normal[ix, iy]
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    centers = _column_centers(grid, ix, iy)
    edge = centers - 0.5 * grid.geometry.voxel_size * n
    return centers, n, edge + params.offroad_push * n


def static_candidates(scenario: Scenario, params: SynthParams) -> np.ndarray:
    """Centres of columns holding Building/Barrier/Vegetation inside the ego body's height range."""
    grid = scenario.static_grid
    ego = scenario.ego
    body = z_slab_mask(grid.geometry, ego.z_base, ego.extent[2])
    cols = (grid.has_bits(OBSTACLE_BITS) & body).any(axis=-1)
    ix, iy = np.nonzero(cols)
    return _column_centers(grid, ix, iy)


def interceptable(scenario: Scenario, params: SynthParams) -> np.ndarray:
    """Agents the ego can catch: not receding from it at or above the ego's own speed."""
    ego = scenario.ego
    speed = params.step_distances(ego).mean() / params.dt
    out = []
    for a in scenario.agents:
        rel = np.asarray(a.center[:2]) - ego.pose.xy
        n = np.linalg.norm(rel)
        radial = 0.0 if n == 0 else float(np.dot(a.velocity, rel / n))
        out.append(radial < speed or radial <= 0.0)
    return np.array(out, dtype=bool)


def select_target(scenario: Scenario, mode, rng: np.random.Generator,
                  params: SynthParams | None = None) -> Target:
    """Failure target for ``mode``.

    Distances are measured from the inertial endpoint, so "nearest" means the
    smallest deviation from where the ego would have been.  Ties within
    ``candidate_slack`` metres are broken by ``rng`` to diversify the suite.
    """
    mode = FailureMode.parse(mode)
    params = params or SynthParams(K=scenario.horizon, dt=scenario.dt)
    ref = inertial_endpoint(scenario.ego, params)
    p0 = scenario.ego.pose.xy

    if mode is FailureMode.DYNAMIC_COLLISION:
        if not scenario.agents:
            raise NoAgentsError("DynamicCollision needs at least one agent")
        t_mid = params.K * params.dt / 2.0
        pts = np.array([a.position_at(t_mid) for a in scenario.agents])
        dist = np.linalg.norm(pts - p0, axis=1)
        ok = np.flatnonzero((dist <= params.search_radius) & (dist > 1e-6)
                            & interceptable(scenario, params))
        if len(ok) == 0:
            raise NoAgentsError("no agent reaches an interceptable position within range")
        i = int(ok[_pick(rng, pts[ok], ref, params.candidate_slack)])
        a = scenario.agents[i]
        return Target(tuple(pts[i]), mode, a.id)

    if mode is FailureMode.STATIC_PENETRATION:
        pts = static_candidates(scenario, params)
        pts = pts[np.linalg.norm(pts - p0, axis=1) <= params.search_radius] if len(pts) else pts
        if len(pts) == 0:
            raise NoStaticObstacleError("no Building/Barrier/Vegetation column within range")
        return Target(tuple(pts[_pick(rng, pts, ref, params.candidate_slack)]), mode)

    centers, _, pushed = offroad_candidates(scenario, params)
    keep = np.linalg.norm(pushed - p0, axis=1) <= params.search_radius if len(pushed) else []
    pushed = pushed[keep] if len(pushed) else pushed
    if len(pushed) == 0:
        raise NoRoadBoundaryError("no drivable-area boundary within range")
    return Target(tuple(pushed[_pick(rng, centers[keep], ref, params.candidate_slack)]), mode)


# ---- future re-synthesis -----------------------------------------------------------

def frame_transforms(original: Trajectory, cf: Trajectory) -> list[RigidTransform]:
    """``T_k`` mapping counterfactual ego-frame coordinates into the original ego frame at step k."""
    return [RigidTransform.between(o, c) for o, c in zip(original.poses, cf.poses)]


def synthesize_future_grids(scenario: Scenario, cf_traj: Trajectory) -> tuple[SemanticGrid, ...]:
    if len(cf_traj) != scenario.horizon:
        raise ValueError(f"counterfactual trajectory has {len(cf_traj)} steps, "
                         f"scenario horizon is {scenario.horizon}")
    geom = scenario.geometry
    stamp = np.where(ego_stamp(geom, scenario.ego), np.uint16(EGO), np.uint16(0))
    clear = np.uint16(~EGO & 0xFFFF)
    out = []
    for k, T in enumerate(frame_transforms(scenario.original_traj, cf_traj)):
        src = scenario.original_futures[k]
        src = src.with_data(src.data & clear)
        moved = resample(src, T)
        out.append(moved.with_data(moved.data | stamp))
    return tuple(out)


def counterfactual_scenario(scenario: Scenario, cf_traj: Trajectory, meta=None, name=None) -> Scenario:
    """Scenario whose recorded trajectory/futures are the counterfactual ones."""
    futures = synthesize_future_grids(scenario, cf_traj)
    return scenario.replace(original_traj=cf_traj, original_futures=futures,
                            name=name if name is not None else scenario.name,
                            meta=dict(meta or {}))


# ---- failure checks -----------------------------------------------------------------

def failure_evidence(scenario: Scenario, traj: Trajectory) -> dict:
    """Veridical-oracle evidence for each failure type along ``traj``."""
    res = VeridicalOracle(scenario).forecast(traj)
    ious, _ = collision_terms(res.labels, res.instance, len(res.agent_ids), RewardConfig())
    ego = (res.labels & np.uint16(EGO)) != 0
    obstacle = (res.labels & np.uint16(OBSTACLE_BITS)) != 0
    return {
        "max_vc_iou": float(ious.max()) if ious.size else 0.0,
        "offroad": int(offroad_kernel(res.labels)),
        "static_overlap": int(np.count_nonzero(ego & obstacle)),
    }


def manifests_failure(mode, evidence: dict) -> bool:
    mode = FailureMode.parse(mode)
    if mode is FailureMode.DYNAMIC_COLLISION:
        return evidence["max_vc_iou"] > 0
    if mode is FailureMode.OFFROAD:
        return evidence["offroad"] > 0
    return evidence["static_overlap"] > 0


# ---- curriculum -----------------------------------------------------------------------

def plan_modes(count: int, weights=None) -> dict[FailureMode, int]:
    """Largest-remainder split of ``count`` slots across modes."""
    weights = weights or MODE_WEIGHTS
    if count < 0:
        raise ValueError("count must be >= 0")
    modes = list(weights)
    raw = np.array([weights[m] for m in modes], dtype=float)
    raw = raw / raw.sum() * count
    base = np.floor(raw + 1e-9).astype(int)
    rem = raw - base
    order = sorted(range(len(modes)), key=lambda i: (-rem[i], i))
    for i in order[:count - base.sum()]:
        base[i] += 1
    return {m: int(n) for m, n in zip(modes, base)}


def mode_sequence(count: int, seed: int) -> list[FailureMode]:
    plan = plan_modes(count)
    seq = [m for m, n in plan.items() for _ in range(n)]
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5EED]))
    return [seq[i] for i in rng.permutation(len(seq))]


def slot_seed(seed: int, slot: int, attempt: int) -> int:
    ss = np.random.SeedSequence([int(seed), int(slot), int(attempt)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass
class CurriculumItem:
    slot: int
    mode: FailureMode
    seed: int
    source: str
    scenario: Scenario | None
    target: Target | None
    attempts: int
    evidence: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.scenario is not None


def synthesize_slot(sources, slot: int, mode: FailureMode, seed: int, params: SynthParams,
                    verify: bool = True, max_attempts: int = 8) -> CurriculumItem:
    """One curriculum entry; retries on infeasible or non-manifesting draws, recording why."""
    notes = []
    names = [n for n, _ in sources]
    for attempt in range(max_attempts):
        s = slot_seed(seed, slot, attempt)
        rng = np.random.default_rng(s)
        src_idx = int(rng.integers(len(sources)))
        name, scenario = sources[src_idx]
        p = SynthParams(K=scenario.horizon, noise_sigma=params.noise_sigma,
                        step_speed_profile=params.step_speed_profile, seed=s, dt=scenario.dt,
                        offroad_push=params.offroad_push, search_radius=params.search_radius,
                        candidate_slack=params.candidate_slack)
        try:
            target = select_target(scenario, mode, rng, p)
            traj = synthesize_trajectory(scenario.ego, target.point, p, rng)
        except ModeInfeasibleError as exc:
            notes.append(f"attempt {attempt}: {name}: {type(exc).__name__}: {exc}")
            continue
        evidence = {}
        if verify:
            evidence = failure_evidence(scenario, traj)
            if not manifests_failure(mode, evidence):
                notes.append(f"attempt {attempt}: {name}: failure did not manifest {evidence}")
                continue
        meta = {"mode": mode.value, "source": name, "seed": s, "target": target.to_dict(),
                "source_trajectory": scenario.original_traj.to_dict()}
        cf = counterfactual_scenario(scenario, traj, meta, name=f"cf_{slot:05d}")
        return CurriculumItem(slot, mode, s, name, cf, target, attempt + 1, evidence, notes)
    return CurriculumItem(slot, mode, slot_seed(seed, slot, 0), names[0] if names else "",
                          None, None, max_attempts, {}, notes + ["skipped: no feasible draw"])


def iter_curriculum(sources, count: int, seed: int = 0, params: SynthParams | None = None,
                    verify: bool = True, max_attempts: int = 8):
    """Yield curriculum items in slot order; each depends only on (sources, seed, slot)."""
    sources = _named(sources)
    if count > 0 and not sources:
        raise ValueError("empty scenario dataset")
    params = params or SynthParams()
    for slot, mode in enumerate(mode_sequence(count, seed)):
        yield synthesize_slot(sources, slot, mode, seed, params, verify, max_attempts)


def _named(sources) -> list[tuple[str, Scenario]]:
    out = []
    for i, s in enumerate(sources):
        if isinstance(s, Scenario):
            out.append((s.name or f"scene_{i:04d}", s))
        else:
            out.append((str(s[0]), s[1]))
    return out
