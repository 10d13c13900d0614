"""Scenario files: a JSON document plus ``IOCC`` grid blobs referenced by relative path."""

from __future__ import annotations

import json
from pathlib import Path

from .geometry import Trajectory
from .gridio import read_grid, write_grid
from .scene import AgentBox, EgoState, Scenario

SCENARIO_VERSION = 1
SCENARIO_FILE = "scenario.json"


class DatasetNotFoundError(FileNotFoundError):
    pass


def dump_json(obj, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")
    return path


def scenario_to_dict(scenario: Scenario, static_path: str, future_paths: list[str]) -> dict:
    return {
        "version": SCENARIO_VERSION,
        "name": scenario.name,
        "horizon_k": scenario.horizon,
        "dt": scenario.dt,
        "ego": scenario.ego.to_dict(),
        "agents": [a.to_dict() for a in scenario.agents],
        "static_grid_path": static_path,
        "future_grid_paths": list(future_paths),
        "trajectory": scenario.original_traj.to_dict(),
        "meta": scenario.meta,
    }


def save_scenario(scenario: Scenario, out_dir) -> Path:
    """Write ``scenario.json`` and its grids into ``out_dir``; returns the JSON path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    static_path = "static.iocc"
    write_grid(out_dir / static_path, scenario.static_grid)
    future_paths = []
    for k, g in enumerate(scenario.original_futures):
        rel = f"future_{k:02d}.iocc"
        write_grid(out_dir / rel, g)
        future_paths.append(rel)
    return dump_json(scenario_to_dict(scenario, static_path, future_paths), out_dir / SCENARIO_FILE)


def load_scenario(path) -> Scenario:
    path = Path(path)
    if path.is_dir():
        path = path / SCENARIO_FILE
    doc = json.loads(path.read_text())
    if doc.get("version") != SCENARIO_VERSION:
        raise ValueError(f"unsupported scenario version {doc.get('version')!r}")
    base = path.parent
    traj = Trajectory.from_dict(doc["trajectory"])
    futures = []
    for rel in doc["future_grid_paths"]:
        p = base / rel
        if not p.exists():
            raise FileNotFoundError(f"missing ground-truth grid {p}")
        futures.append(read_grid(p))
    if len(futures) != int(doc["horizon_k"]):
        raise ValueError("horizon_k disagrees with the number of future grids")
    return Scenario(
        static_grid=read_grid(base / doc["static_grid_path"]),
        agents=tuple(AgentBox.from_dict(a) for a in doc["agents"]),
        ego=EgoState.from_dict(doc["ego"]),
        original_traj=traj,
        original_futures=tuple(futures),
        name=doc.get("name", ""),
        meta=doc.get("meta", {}),
    )


def find_scenarios(root) -> list[Path]:
    root = Path(root)
    if not root.exists():
        raise DatasetNotFoundError(f"dataset not found: {root}")
    if root.is_file():
        return [root]
    paths = sorted(root.rglob(SCENARIO_FILE))
    if not paths:
        raise DatasetNotFoundError(f"dataset not found: no {SCENARIO_FILE} under {root}")
    return paths


def load_dataset(root) -> list[tuple[str, Scenario]]:
    """All scenarios under ``root`` keyed by their path relative to it."""
    root = Path(root)
    out = []
    for p in find_scenarios(root):
        rel = p.parent.relative_to(root).as_posix() if root.is_dir() else p.parent.name
        out.append((rel or p.parent.name, load_scenario(p)))
    return out


def read_manifest(path) -> list[dict]:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.jsonl"
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    records = []
    for i, line in enumerate(path.read_text().splitlines()):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"malformed manifest line {i + 1}: {exc}") from exc
        if not isinstance(rec, dict) or "id" not in rec:
            raise ValueError(f"malformed manifest line {i + 1}: missing id")
        records.append(rec)
    return records
