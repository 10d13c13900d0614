"""GRPO refinement on the bundled hazard-ahead scenario across several seeds.

    python scripts/train_hazard.py --seeds 10 --out results/hazard
"""

import argparse
import json
from pathlib import Path

import numpy as np

from cfworld.grpo import TrainConfig, smoothed, train, write_log
from cfworld.scenes import hazard_ahead


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--iterations", type=int, default=200)
    ap.add_argument("--G", type=int, default=64)
    ap.add_argument("--model", default="veridical", choices=["veridical", "optimistic"])
    ap.add_argument("--out", type=Path, default=None)
    args = ap.parse_args()

    scenario, rcfg = hazard_ahead()
    safe = monotone = 0
    for seed in range(args.seeds):
        cfg = TrainConfig(G=args.G, iterations=args.iterations, seed=seed)
        res = train(scenario, args.model, rcfg, cfg)
        s = smoothed([r["mean_reward"] for r in res.log])
        dips = int(np.count_nonzero(np.diff(s) < 0))
        ok = res.final["coll"] == 0 and res.final["offroad"] == 0
        safe += ok
        monotone += dips == 0
        print(f"seed {seed}: reward {res.log[0]['mean_reward']:8.2f} -> {res.log[-1]['mean_reward']:8.2f}  "
              f"smoothed dips {dips:3d}  final coll {res.final['coll']:.3f} offroad {res.final['offroad']:.0f}")
        if args.out is not None:
            d = args.out / f"seed_{seed:02d}"
            d.mkdir(parents=True, exist_ok=True)
            write_log(res.log, d / "train_log.jsonl")
            (d / "final_reward.json").write_text(json.dumps(res.final, indent=1, sort_keys=True))
    print(f"safe final trajectory in {safe}/{args.seeds} seeds; monotone smoothed reward in {monotone}/{args.seeds}")


if __name__ == "__main__":
    main()
