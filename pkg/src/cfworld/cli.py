"""``cfworld`` command line: scenes, synth, forecast, reward, rfb, train, export.

Exit codes: 0 success, 1 usage error, 2 input error, 3 runtime error.  On
failure a one-line JSON error record is written to stderr.  Every command
that takes ``--out`` writes its fully resolved configuration to
``<out>/config.json``.  A ``--config`` JSON file supplies defaults; explicit
flags win.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path


from .export import FORMATS, UnsupportedFormatError, export_grid
from .geometry import Trajectory
from .gridio import GridFormatError, read_grid
from .oracle import ORACLES
from .reward import RewardConfig, total_reward
from .scenario_io import (DatasetNotFoundError, dump_json, load_dataset, load_scenario,
                          save_scenario)

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_RUNTIME = 0, 1, 2, 3
HAZARD = "hazard-ahead"


class UsageError(Exception):
    pass


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common(p):
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", type=Path, default=None, help="JSON file of defaults; flags override")
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--jobs", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cfworld", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("scenes", help="write a procedural source dataset (or the bundled hazard scenario)")
    _common(p)
    p.add_argument("--count", type=int, default=None)
    p.add_argument("--hazard", action="store_true", default=None, help="write the hazard-ahead scenario instead")

    p = sub.add_parser("synth", help="generate a failure curriculum from a scenario dataset")
    _common(p)
    p.add_argument("dataset", type=Path)
    p.add_argument("--count", type=int, default=None)
    p.add_argument("--no-verify", dest="verify", action="store_false", default=None)

    p = sub.add_parser("forecast", help="forecast a trajectory with an oracle world model")
    _common(p)
    p.add_argument("scenario")
    p.add_argument("--model", default=None)
    p.add_argument("--trajectory", type=Path, default=None)

    p = sub.add_parser("reward", help="score a trajectory under an oracle forecast")
    _common(p)
    p.add_argument("scenario")
    p.add_argument("--model", default=None)
    p.add_argument("--trajectory", type=Path, default=None)

    p = sub.add_parser("rfb", help="run the risk-foreseeing benchmark on a curriculum suite")
    _common(p)
    p.add_argument("suite", type=Path)
    p.add_argument("--model", default=None)
    p.add_argument("--crit-radius", type=float, default=None)

    p = sub.add_parser("train", help="GRPO refinement on one scenario")
    _common(p)
    p.add_argument("scenario", nargs="?", default=None, help=f"scenario path or '{HAZARD}' (default)")
    p.add_argument("--model", default=None)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--group-size", dest="G", type=int, default=None)
    p.add_argument("--lambda-bc", type=float, default=None)
    p.add_argument("--learning-rate", type=float, default=None)

    p = sub.add_parser("export", help="export a grid (.iocc) or forecast directory as PLY/CSV")
    _common(p)
    p.add_argument("source", type=Path)
    p.add_argument("--format", dest="fmt", default=None)
    return parser


# ---- config resolution ------------------------------------------------------------------

_DEFAULTS = {
    "scenes": {"seed": 0, "count": 50, "hazard": False, "out": "scenes"},
    "synth": {"seed": 0, "count": 100, "verify": True, "jobs": 1, "out": "curriculum", "max_attempts": 8,
              "synth": {}},
    "forecast": {"seed": 0, "model": "veridical", "trajectory": None, "out": "forecast"},
    "reward": {"seed": 0, "model": "veridical", "trajectory": None, "out": None, "reward": None},
    "rfb": {"seed": 0, "model": "veridical", "crit_radius": 3.0, "jobs": 1, "out": "rfb"},
    "train": {"seed": 0, "model": "veridical", "scenario": HAZARD, "out": "train", "reward": None, "train": {}},
    "export": {"seed": 0, "fmt": "ply", "out": "export"},
}
_TRAIN_FLAGS = ("iterations", "G", "lambda_bc", "learning_rate")


def resolve_config(args) -> dict:
    cfg = json.loads(json.dumps(_DEFAULTS[args.command]))
    if args.config is not None:
        if not args.config.exists():
            raise InputError(f"config file not found: {args.config}")
        try:
            file_cfg = json.loads(args.config.read_text())
        except json.JSONDecodeError as exc:
            raise InputError(f"malformed config {args.config}: {exc}") from exc
        if not isinstance(file_cfg, dict):
            raise InputError("config file must hold a JSON object")
        cfg.update(file_cfg)
    for key, value in vars(args).items():
        if key in ("command", "config") or value is None:
            continue
        if args.command == "train" and key in _TRAIN_FLAGS:
            cfg.setdefault("train", {})[key] = value
        else:
            cfg[key] = str(value) if isinstance(value, Path) else value
    if args.command == "train":
        cfg.setdefault("train", {})["seed"] = cfg["seed"]
    return cfg


def _dataclass_from(cls, d):
    d = dict(d or {})
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**d)


def _echo(cfg, out) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    dump_json(cfg, out / "config.json")
    return out


def _load_scenario_arg(arg):
    if arg == HAZARD:
        from .scenes import hazard_ahead
        return hazard_ahead()
    p = Path(arg)
    if not p.exists():
        raise InputError(f"scenario not found: {arg}")
    return load_scenario(p), None


def _load_trajectory(path, scenario):
    if path is None:
        return scenario.original_traj
    p = Path(path)
    if not p.exists():
        raise InputError(f"trajectory not found: {p}")
    return Trajectory.from_dict(json.loads(p.read_text()))


def _reward_cfg(cfg, bundled):
    if cfg.get("reward") is None:
        return bundled or RewardConfig()
    r = cfg["reward"]
    if isinstance(r, str):
        return RewardConfig.from_json(r)
    return RewardConfig.from_dict(r)


def _model(name):
    if name not in ORACLES:
        raise UsageError(f"unknown model {name!r}; expected one of {sorted(ORACLES)}")
    return name


# ---- commands ---------------------------------------------------------------------------------

def cmd_scenes(cfg) -> int:
    from .scenes import hazard_ahead, random_dataset
    out = _echo(cfg, cfg["out"])
    if cfg["hazard"]:
        scenario, rcfg = hazard_ahead()
        save_scenario(scenario, out / HAZARD)
        dump_json(rcfg.to_dict(), out / HAZARD / "reward_config.json")
        print(f"wrote {out / HAZARD}")
        return EXIT_OK
    for sc in random_dataset(int(cfg["count"]), int(cfg["seed"])):
        save_scenario(sc, out / sc.name)
    print(f"wrote {cfg['count']} scenes to {out}")
    return EXIT_OK


def cmd_synth(cfg) -> int:
    from .curriculum import generate_curriculum
    from .synth import SynthParams
    dataset = Path(cfg["dataset"])
    sources = load_dataset(dataset)
    params = _dataclass_from(SynthParams, {"seed": cfg["seed"], **cfg.get("synth", {})})
    out = _echo(cfg, cfg["out"])
    records = generate_curriculum(sources, out, int(cfg["count"]), int(cfg["seed"]), params,
                                  verify=bool(cfg["verify"]), max_attempts=int(cfg["max_attempts"]),
                                  jobs=int(cfg["jobs"]))
    ok = sum(r["status"] == "ok" for r in records)
    modes = {}
    for r in records:
        if r["status"] == "ok":
            modes[r["mode"]] = modes.get(r["mode"], 0) + 1
    print(json.dumps({"generated": ok, "requested": len(records), "modes": modes}, sort_keys=True))
    return EXIT_OK


def cmd_forecast(cfg) -> int:
    model = _model(cfg["model"])
    scenario, _ = _load_scenario_arg(cfg["scenario"])
    traj = _load_trajectory(cfg["trajectory"], scenario)
    out = _echo(cfg, cfg["out"])
    res = ORACLES[model](scenario).forecast(traj)
    path = res.save(out)
    print(f"wrote {path}")
    return EXIT_OK


def cmd_reward(cfg) -> int:
    model = _model(cfg["model"])
    scenario, bundled = _load_scenario_arg(cfg["scenario"])
    traj = _load_trajectory(cfg["trajectory"], scenario)
    rcfg = _reward_cfg(cfg, bundled)
    res = ORACLES[model](scenario).forecast(traj)
    breakdown = total_reward(res, traj, rcfg).to_dict()
    if cfg.get("out"):
        out = _echo({**cfg, "reward": rcfg.to_dict()}, cfg["out"])
        dump_json(breakdown, out / "reward.json")
    print(json.dumps(breakdown, sort_keys=True))
    return EXIT_OK


def cmd_rfb(cfg) -> int:
    from .rfb import run_benchmark
    model = _model(cfg["model"])
    suite = Path(cfg["suite"])
    if not suite.exists():
        raise InputError(f"suite not found: {suite}")
    report = run_benchmark(model, suite, int(cfg["seed"]), float(cfg["crit_radius"]), int(cfg["jobs"]))
    out = _echo(cfg, cfg["out"])
    report.write(out)
    print(report.summary_line())
    return EXIT_OK


def cmd_train(cfg) -> int:
    from .grpo import TrainConfig, train, write_log
    model = _model(cfg["model"])
    scenario, bundled = _load_scenario_arg(cfg["scenario"])
    rcfg = _reward_cfg(cfg, bundled)
    tcfg = TrainConfig.from_dict(cfg.get("train", {}))
    resolved = {**cfg, "reward": rcfg.to_dict(), "train": tcfg.to_dict()}
    out = _echo(resolved, cfg["out"])
    log_path = out / "train_log.jsonl"
    with open(log_path, "w") as fh:
        def log_fn(rec):
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
            fh.flush()
        result = train(scenario, model, rcfg, tcfg, log_fn=log_fn)
    write_log(result.log, log_path)
    dump_json(result.params.to_dict(), out / "policy.json")
    dump_json(result.final, out / "final_reward.json")
    mean_traj = result.mean_trajectory(scenario.original_traj)
    dump_json(mean_traj.to_dict(), out / "mean_trajectory.json")
    print(json.dumps({"iterations": tcfg.iterations, "final": result.final}, sort_keys=True))
    return EXIT_OK


def cmd_export(cfg) -> int:
    fmt = cfg["fmt"]
    if fmt not in FORMATS:
        raise UsageError(f"unsupported format {fmt!r}; expected one of {FORMATS}")
    src = Path(cfg["source"])
    if not src.exists():
        raise InputError(f"export source not found: {src}")
    out = _echo(cfg, cfg["out"])
    written = []
    if src.is_dir() or src.name == "forecast.json":
        sidecar = src / "forecast.json" if src.is_dir() else src
        if not sidecar.exists():
            raise InputError(f"no forecast.json in {src}")
        doc = json.loads(sidecar.read_text())
        for rel in doc["frame_paths"]:
            grid = read_grid(sidecar.parent / rel)
            written.append(export_grid(grid, out / f"{Path(rel).stem}.{fmt}", fmt))
    else:
        written.append(export_grid(read_grid(src), out / f"{src.stem}.{fmt}", fmt))
    for p in written:
        print(p)
    return EXIT_OK


COMMANDS = {"scenes": cmd_scenes, "synth": cmd_synth, "forecast": cmd_forecast, "reward": cmd_reward,
            "rfb": cmd_rfb, "train": cmd_train, "export": cmd_export}


def _fail(code, exc) -> int:
    print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("missing command; choose one of " + ", ".join(COMMANDS))
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except (UsageError, UnsupportedFormatError) as exc:
        return _fail(EXIT_USAGE, exc)
    except (InputError, DatasetNotFoundError, FileNotFoundError, GridFormatError,
            json.JSONDecodeError, KeyError, ValueError) as exc:
        return _fail(EXIT_INPUT, exc)
    except Exception as exc:      # noqa: BLE001 - reported as a runtime failure record
        return _fail(EXIT_RUNTIME, exc)


if __name__ == "__main__":
    sys.exit(main())
