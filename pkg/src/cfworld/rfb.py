"""Risk-foreseeing benchmark: G-IoU, f-IoU and DAF, plus a suite runner.

The Ego bit is the conditioning stamp shared by prediction and ground truth,
so it is left out of both class IoU and occupancy; otherwise a voxel holding
``{Ego, Sidewalk}`` would count as correctly occupied even after a model
paves it over.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .geometry import Trajectory
from .grid import EGO, FREE_BIT, GridGeometry, SemanticLabel
from .oracle import ORACLES
from .scenario_io import load_scenario, read_manifest
from .scene import Scenario, render_frames
from .voxel import transformed_centers

CRIT_RADIUS = 3.0
METRIC_CLASSES = tuple(l for l in SemanticLabel if l not in (SemanticLabel.FREE, SemanticLabel.EGO))
_NOT_OCCUPIED = np.uint16(EGO | FREE_BIT)


class UndefinedMetricError(ValueError):
    pass


class EmptySuiteError(ValueError):
    pass


def _stack(frames) -> np.ndarray:
    if isinstance(frames, np.ndarray):
        return frames
    return np.stack([getattr(f, "data", f) for f in frames])


def _check(pred, gt):
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")


def _column_mask(valid, shape):
    if valid is None:
        return np.ones(shape[:3] + (1,), dtype=bool)
    valid = np.asarray(valid, dtype=bool)
    if valid.shape != shape[:3]:
        raise ValueError(f"valid mask shape {valid.shape} != {shape[:3]}")
    return valid[..., None]


def g_iou(pred, gt, valid=None) -> float:
    """Class-mean of per-class voxel IoU, each averaged over the frames where the class appears.

    ``valid`` optionally restricts scoring to observed ``(K, nx, ny)`` columns.
    """
    pred, gt = _stack(pred), _stack(gt)
    _check(pred, gt)
    cols = _column_mask(valid, pred.shape)
    per_class = []
    for lab in METRIC_CLASSES:
        b = np.uint16(lab.bit)
        p = ((pred & b) != 0) & cols
        g = ((gt & b) != 0) & cols
        axes = tuple(range(1, p.ndim))
        inter = (p & g).sum(axis=axes)
        union = (p | g).sum(axis=axes)
        seen = union > 0
        if seen.any():
            per_class.append(float(np.mean(inter[seen] / union[seen])))
    return 1.0 if not per_class else float(np.mean(per_class))


def critical_columns(geom: GridGeometry, traj: Trajectory, radius: float = CRIT_RADIUS) -> np.ndarray:
    """Boolean ``(K, nx, ny)``: columns within ``radius`` of the remaining ego path in each frame.

    Frame k is centred on waypoint k; its path runs from the origin through
    waypoints k+1..K expressed in that frame.
    """
    X = geom.centers(0)[:, None]
    Y = geom.centers(1)[None, :]
    K = len(traj)
    out = np.zeros((K, geom.nx, geom.ny), dtype=bool)
    poses = traj.pose_array()
    for k in range(K):
        x0, y0, yaw = poses[k]
        c, s = math.cos(yaw), math.sin(yaw)
        rest = poses[k:, :2] - (x0, y0)
        pts = np.column_stack([c * rest[:, 0] + s * rest[:, 1], -s * rest[:, 0] + c * rest[:, 1]])
        d2 = (X - pts[0, 0]) ** 2 + (Y - pts[0, 1]) ** 2
        for a, b in zip(pts[:-1], pts[1:]):
            ab = b - a
            L2 = float(ab @ ab)
            if L2 == 0.0:
                continue
            t = np.clip(((X - a[0]) * ab[0] + (Y - a[1]) * ab[1]) / L2, 0.0, 1.0)
            d2 = np.minimum(d2, (X - a[0] - t * ab[0]) ** 2 + (Y - a[1] - t * ab[1]) ** 2)
        out[k] = d2 <= radius * radius + 1e-9
    return out


def f_iou(pred, gt, future_traj: Trajectory, geom: GridGeometry, crit_radius: float = CRIT_RADIUS,
          valid=None) -> float:
    """Occupied-voxel IoU inside the critical volume around the future ego path."""
    pred, gt = _stack(pred), _stack(gt)
    _check(pred, gt)
    crit = critical_columns(geom, future_traj, crit_radius)
    if crit.shape != pred.shape[:3]:
        raise ValueError("trajectory horizon does not match the number of frames")
    crit = crit & _column_mask(valid, pred.shape)[..., 0]
    if not crit.any():
        raise UndefinedMetricError("critical volume is empty")
    p = ((pred & ~_NOT_OCCUPIED) != 0) & crit[..., None]
    g = ((gt & ~_NOT_OCCUPIED) != 0) & crit[..., None]
    union = np.count_nonzero(p | g)
    return 1.0 if union == 0 else np.count_nonzero(p & g) / union


def _iou(a: np.ndarray, b: np.ndarray) -> float:
    u = np.count_nonzero(a | b)
    return 0.0 if u == 0 else np.count_nonzero(a & b) / u


def instance_masks(instance: np.ndarray, agent_ids) -> list[dict[int, np.ndarray]]:
    """Per-frame ``{agent_id: boolean mask}`` from an instance-slot volume ``(K, nx, ny, nz)``."""
    out = []
    for frame in instance:
        d = {}
        for slot, aid in enumerate(agent_ids):
            m = frame == slot
            if m.any():
                d[aid] = m
        out.append(d)
    return out


def daf(pred_agents, gt_agents, match: str = "auto", restrict_to=None) -> float:
    """Mean over GT agents of their per-frame IoU against the matched prediction.

    ``pred_agents``/``gt_agents`` are per-frame ``{id: mask}`` maps (boolean
    arrays or index sets).  ``match``: ``"id"``, ``"overlap"`` (greedy
    max-overlap, ignores ids) or ``"auto"`` (ids first, overlap for the rest).
    Agents are averaged over the frames where they appear in the ground truth;
    unmatched agents score 0.  ``restrict_to`` limits scoring to those GT ids.
    """
    if match not in ("auto", "id", "overlap"):
        raise ValueError(f"unknown match mode {match!r}")
    gt_ids = sorted({aid for frame in gt_agents for aid in frame})
    if restrict_to is not None:
        gt_ids = [a for a in gt_ids if a in set(restrict_to)]
    if not gt_ids:
        return 1.0
    pred_ids = sorted({aid for frame in pred_agents for aid in frame})
    assignment = _match(pred_agents, gt_agents, gt_ids, pred_ids, match)
    scores = []
    for gid in gt_ids:
        pid = assignment.get(gid)
        vals = []
        for k, frame in enumerate(gt_agents):
            if gid not in frame:
                continue
            g = _as_mask(frame[gid])
            p = pred_agents[k].get(pid) if pid is not None and k < len(pred_agents) else None
            vals.append(0.0 if p is None else _iou_any(_as_mask(p), g))
        scores.append(float(np.mean(vals)))
    return float(np.mean(scores))


def _as_mask(m):
    if isinstance(m, np.ndarray) and m.dtype == bool:
        return m
    return frozenset(np.asarray(sorted(m) if isinstance(m, (set, frozenset)) else m).ravel().tolist())


def _iou_any(a, b) -> float:
    if isinstance(a, frozenset) or isinstance(b, frozenset):
        a = a if isinstance(a, frozenset) else frozenset(np.flatnonzero(a.ravel(order="F")).tolist())
        b = b if isinstance(b, frozenset) else frozenset(np.flatnonzero(b.ravel(order="F")).tolist())
        u = len(a | b)
        return 0.0 if u == 0 else len(a & b) / u
    return _iou(a, b)


def _match(pred_agents, gt_agents, gt_ids, pred_ids, mode) -> dict:
    assignment = {}
    if mode in ("auto", "id"):
        for gid in gt_ids:
            if gid in pred_ids:
                assignment[gid] = gid
        if mode == "id":
            return assignment
    free_gt = [g for g in gt_ids if g not in assignment]
    free_pred = [p for p in pred_ids if p not in assignment.values()]
    if not free_gt or not free_pred:
        return assignment
    # total overlap (summed over frames) between every unmatched pair, then greedy
    score = np.zeros((len(free_gt), len(free_pred)))
    for k, gframe in enumerate(gt_agents):
        pframe = pred_agents[k] if k < len(pred_agents) else {}
        for i, gid in enumerate(free_gt):
            if gid not in gframe:
                continue
            g = _as_mask(gframe[gid])
            for j, pid in enumerate(free_pred):
                if pid in pframe:
                    score[i, j] += _iou_any(_as_mask(pframe[pid]), g)
    while score.size and score.max() > 0:
        i, j = np.unravel_index(int(np.argmax(score)), score.shape)
        assignment[free_gt[i]] = free_pred[j]
        score[i, :] = -1
        score[:, j] = -1
    return assignment


# ---- benchmark runner ---------------------------------------------------------

@dataclass
class ScenarioScore:
    id: str
    mode: str = ""
    g_iou: float | None = None
    f_iou: float | None = None
    daf: float | None = None
    daf_critical: float | None = None
    deleted_agents: int = 0
    error: str | None = None


@dataclass
class RFBReport:
    model: str
    seed: int
    scenarios: list[ScenarioScore] = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(self.scenarios)

    def aggregate(self) -> dict:
        out = {}
        for key in ("g_iou", "f_iou", "daf", "daf_critical"):
            vals = [getattr(s, key) for s in self.scenarios if getattr(s, key) is not None]
            out[key] = float(np.mean(vals)) if vals else None
        out["n_scored"] = sum(s.error is None for s in self.scenarios)
        out["n_errors"] = sum(s.error is not None for s in self.scenarios)
        out["n_daf"] = sum(s.daf is not None for s in self.scenarios)
        return out

    def to_dict(self) -> dict:
        return {"model": self.model, "seed": self.seed, "count": self.count,
                "aggregate": self.aggregate(), "scenarios": [asdict(s) for s in self.scenarios]}

    def summary_line(self) -> str:
        a = self.aggregate()
        fmt = lambda v: "n/a" if v is None else f"{100 * v:.2f}"
        return (f"{self.model}: G-IoU {fmt(a['g_iou'])}  f-IoU {fmt(a['f_iou'])}  "
                f"DAF {fmt(a['daf'])}  (n={a['n_scored']}, errors={a['n_errors']})")

    def write(self, out_dir) -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        jpath = out_dir / f"rfb_{self.model}.json"
        jpath.write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")
        cpath = out_dir / f"rfb_{self.model}.csv"
        cols = list(ScenarioScore.__dataclass_fields__)
        with open(cpath, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for s in self.scenarios:
                w.writerow(["" if getattr(s, c) is None else getattr(s, c) for c in cols])
        return jpath, cpath


def gt_instances(scenario: Scenario) -> list[dict[int, np.ndarray]]:
    """Ground-truth agent masks in the counterfactual frames (constant-velocity agents)."""
    traj = scenario.original_traj
    _, inst = render_frames(scenario.static_grid, scenario.agents, None, traj.pose_array(), traj.times)
    return instance_masks(inst, [a.id for a in scenario.agents])


def observed_columns(scenario: Scenario) -> np.ndarray | None:
    """Columns of each counterfactual frame that the synthesized ground truth actually observed.

    Ground truth is resampled from the source recording, so a counterfactual
    frame can reach past what the source frame covered; those columns are
    unknown rather than free.  Needs the source trajectory in ``meta``;
    returns None (score everything) otherwise.
    """
    src = scenario.meta.get("source_trajectory")
    if src is None:
        return None
    src = Trajectory.from_dict(src)
    geom = scenario.geometry
    lo = np.asarray(geom.origin[:2])
    hi = np.asarray(geom.upper[:2])
    X, Y = transformed_centers(geom, scenario.original_traj.pose_array())   # world coordinates
    inside_map = (X >= lo[0]) & (X < hi[0]) & (Y >= lo[1]) & (Y < hi[1])
    sp = src.pose_array()
    c = np.cos(sp[:, 2])[:, None, None]
    s = np.sin(sp[:, 2])[:, None, None]
    dx = X - sp[:, 0, None, None]
    dy = Y - sp[:, 1, None, None]
    u = c * dx + s * dy
    v = -s * dx + c * dy
    inside_src = (u >= lo[0]) & (u < hi[0]) & (v >= lo[1]) & (v < hi[1])
    return inside_map & inside_src


def score_scenario(scenario: Scenario, model: str, crit_radius: float = CRIT_RADIUS,
                   sid: str = "") -> ScenarioScore:
    """Forecast the scenario's (unsafe) trajectory with ``model`` and score it against its GT futures.

    ``daf`` averages over every GT agent in view; ``daf_critical`` only over
    agents that enter the critical volume.  Either is None when there is no
    agent to score.
    """
    oracle = ORACLES[model](scenario)
    traj = scenario.original_traj
    res = oracle.forecast(traj)
    gt = _stack(scenario.original_futures)
    geom = scenario.geometry
    valid = observed_columns(scenario)
    score = ScenarioScore(id=sid or scenario.name, mode=str(scenario.meta.get("mode", "")))
    score.g_iou = g_iou(res.labels, gt, valid)
    score.f_iou = f_iou(res.labels, gt, traj, geom, crit_radius, valid)
    pred_agents = instance_masks(res.instance, res.agent_ids)
    gt_agents = gt_instances(scenario)
    gt_ids = sorted({a for f in gt_agents for a in f})
    if gt_ids:
        score.daf = daf(pred_agents, gt_agents)
    crit = critical_columns(geom, traj, crit_radius)
    critical_ids = [aid for aid in gt_ids
                    if any(aid in f and (f[aid].any(axis=-1) & crit[k]).any()
                           for k, f in enumerate(gt_agents))]
    if critical_ids:
        score.daf_critical = daf(pred_agents, gt_agents, restrict_to=critical_ids)
    pred_ids = {a for f in pred_agents for a in f}
    score.deleted_agents = sum(1 for aid in gt_ids if aid not in pred_ids)
    return score


def _score_entry(args):
    sid, path, mode, model, crit_radius = args
    try:
        sc = load_scenario(path)
        s = score_scenario(sc, model, crit_radius, sid)
        s.mode = mode or s.mode
        return s
    except Exception as exc:     # recorded per scenario, never aborts the run
        return ScenarioScore(id=sid, mode=mode or "", error=f"{type(exc).__name__}: {exc}")


def run_benchmark(model: str, suite, seed: int = 0, crit_radius: float = CRIT_RADIUS,
                  jobs: int = 1) -> RFBReport:
    """Score ``model`` on a curriculum directory (or manifest path) of counterfactual scenarios."""
    if model not in ORACLES:
        raise ValueError(f"unknown model {model!r}; expected one of {sorted(ORACLES)}")
    suite = Path(suite)
    root = suite if suite.is_dir() else suite.parent
    records = [r for r in read_manifest(suite) if r.get("status", "ok") == "ok"]
    if not records:
        raise EmptySuiteError(f"no scenarios in suite {suite}")
    tasks = []
    for r in records:
        rel = r.get("paths", {}).get("scenario")
        if rel is None:
            raise ValueError(f"manifest record {r['id']} has no scenario path")
        tasks.append((r["id"], root / rel, r.get("mode", ""), model, crit_radius))
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            scores = list(ex.map(_score_entry, tasks))
    else:
        scores = [_score_entry(t) for t in tasks]
    return RFBReport(model, seed, scores)


def run_on_scenarios(model: str, scenarios, crit_radius: float = CRIT_RADIUS) -> RFBReport:
    """In-memory variant of :func:`run_benchmark`."""
    scores = []
    for i, sc in enumerate(scenarios):
        try:
            scores.append(score_scenario(sc, model, crit_radius, sc.name or f"s{i}"))
        except Exception as exc:
            scores.append(ScenarioScore(id=sc.name or f"s{i}", error=f"{type(exc).__name__}: {exc}"))
    if not scores:
        raise EmptySuiteError("no scenarios")
    return RFBReport(model, 0, scores)
