"""Write a procedural source dataset and a failure curriculum built from it.

    python scripts/make_scenes.py --out data --scenes 40 --count 100 --seed 0
"""

import argparse
import json
from pathlib import Path

from cfworld.curriculum import generate_curriculum
from cfworld.scenario_io import save_scenario
from cfworld.scenes import random_dataset


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("data"))
    ap.add_argument("--scenes", type=int, default=40)
    ap.add_argument("--count", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()

    sources = random_dataset(args.scenes, args.seed)
    for sc in sources:
        save_scenario(sc, args.out / "scenes" / sc.name)
    records = generate_curriculum(sources, args.out / "curriculum", args.count, args.seed, jobs=args.jobs)
    modes = {}
    for r in records:
        if r["status"] == "ok":
            modes[r["mode"]] = modes.get(r["mode"], 0) + 1
    print(json.dumps({"sources": len(sources), "curriculum": modes}, sort_keys=True))


if __name__ == "__main__":
    main()
