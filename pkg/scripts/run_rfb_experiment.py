"""Score both oracle world models on a curriculum suite and print the comparison table.

    python scripts/run_rfb_experiment.py data/curriculum --out results/rfb --jobs 4
"""

import argparse
from pathlib import Path

from cfworld.rfb import run_benchmark


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("suite", type=Path)
    ap.add_argument("--out", type=Path, default=Path("results/rfb"))
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()

    reports = {m: run_benchmark(m, args.suite, jobs=args.jobs) for m in ("veridical", "optimistic")}
    print(f"{'model':<12}{'G-IoU':>8}{'f-IoU':>8}{'DAF':>8}{'DAF-crit':>10}")
    for model, rep in reports.items():
        rep.write(args.out)
        a = rep.aggregate()
        cells = [f"{100 * a[k]:8.2f}" if a[k] is not None else f"{'n/a':>8}"
                 for k in ("g_iou", "f_iou", "daf")]
        crit = f"{100 * a['daf_critical']:10.2f}" if a["daf_critical"] is not None else f"{'n/a':>10}"
        print(f"{model:<12}{''.join(cells)}{crit}")
    ver = {s.id: s for s in reports["veridical"].scenarios}
    opt = reports["optimistic"].scenarios
    worse = sum(o.f_iou is not None and o.f_iou < ver[o.id].f_iou for o in opt)
    print(f"optimistic f-IoU strictly below veridical on {worse}/{len(opt)} scenarios")


if __name__ == "__main__":
    main()
