"""Failure-curriculum generation to disk: scenario folders plus a JSON-lines manifest."""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .scenario_io import dump_json, save_scenario
from .synth import (MIXING_RATIO, CurriculumItem, SynthParams, _named, mode_sequence,
                    plan_modes, synthesize_slot)


def _record(item: CurriculumItem, rel_dir: str | None) -> dict:
    rec = {
        "id": f"cf_{item.slot:05d}",
        "mode": item.mode.value,
        "seed": item.seed,
        "source": item.source,
        "attempts": item.attempts,
        "notes": item.notes,
        "mixing_ratio": f"{MIXING_RATIO[0]}:{MIXING_RATIO[1]}",
    }
    if item.ok:
        rec["status"] = "ok"
        rec["paths"] = {"scenario": f"{rel_dir}/scenario.json"}
        rec["target"] = list(item.target.point)
        rec["agent_id"] = item.target.agent_id
        rec["evidence"] = item.evidence
    else:
        rec["status"] = "skipped"
        rec["paths"] = {}
    return rec


def _work(args):
    sources, slot, mode, seed, params, verify, max_attempts = args
    return synthesize_slot(sources, slot, mode, seed, params, verify, max_attempts)


def generate_curriculum(sources, out_dir, count: int, seed: int = 0,
                        params: SynthParams | None = None, verify: bool = True,
                        max_attempts: int = 8, jobs: int = 1) -> list[dict]:
    """Synthesize ``count`` failure scenarios with the 40/30/30 mode mix.

    Returns the manifest records (also written to ``out_dir/manifest.jsonl``).
    Output bytes depend only on (sources, count, seed, params), never on ``jobs``.
    """
    out_dir = Path(out_dir)
    sources = _named(sources)
    if count > 0 and not sources:
        raise ValueError("empty scenario dataset")
    params = params or SynthParams()
    out_dir.mkdir(parents=True, exist_ok=True)
    modes = mode_sequence(count, seed)
    tasks = [(sources, slot, mode, seed, params, verify, max_attempts) for slot, mode in enumerate(modes)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            items = list(ex.map(_work, tasks))
    else:
        items = [_work(t) for t in tasks]
    records = []
    for item in items:
        rel = f"scenarios/cf_{item.slot:05d}"
        if item.ok:
            save_scenario(item.scenario, out_dir / rel)
        records.append(_record(item, rel))
    with open(out_dir / "manifest.jsonl", "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    plan = plan_modes(count)
    dump_json({"count": count, "seed": seed, "planned_modes": {m.value: n for m, n in plan.items()},
               "generated": sum(r["status"] == "ok" for r in records),
               "mixing_ratio": {"real": MIXING_RATIO[0], "synthetic": MIXING_RATIO[1]}},
              out_dir / "curriculum.json")
    return records
