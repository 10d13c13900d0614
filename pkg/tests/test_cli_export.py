import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from cfworld.cli import EXIT_INPUT, EXIT_OK, EXIT_USAGE, main
from cfworld.export import UnsupportedFormatError, export_grid, read_ply_vertex_count
from cfworld.grid import SemanticGrid
from cfworld.gridio import write_grid
from cfworld.grpo import PolicyParams
from cfworld.scenario_io import read_manifest

from conftest import SMALL, random_grid


def tree_hash(root: Path) -> str:
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(p.relative_to(root).as_posix().encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def error_record(capsys) -> dict:
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("scenes")
    assert main(["scenes", "--count", "6", "--seed", "2", "--out", str(out)]) == EXIT_OK
    return out


@pytest.fixture(scope="module")
def suite(tmp_path_factory, dataset):
    out = tmp_path_factory.mktemp("suite")
    assert main(["synth", str(dataset), "--count", "10", "--seed", "4", "--out", str(out)]) == EXIT_OK
    return out


# ---- exit codes ------------------------------------------------------------------------------

def test_usage_errors(capsys, tmp_path):
    assert main([]) == EXIT_USAGE
    assert main(["teleport"]) == EXIT_USAGE
    assert main(["rfb", str(tmp_path), "--model", "clairvoyant"]) == EXIT_USAGE
    assert error_record(capsys)["exit_code"] == EXIT_USAGE


def test_missing_dataset_is_input_error(capsys, tmp_path):
    assert main(["synth", str(tmp_path / "nope"), "--out", str(tmp_path / "o")]) == EXIT_INPUT
    rec = error_record(capsys)
    assert rec["exit_code"] == EXIT_INPUT
    assert "dataset not found" in rec["message"]


def test_malformed_suite_manifest(capsys, suite, tmp_path):
    bad = tmp_path / "bad"
    bad.mkdir()
    (bad / "manifest.jsonl").write_text("{not json\n")
    assert main(["rfb", str(bad), "--out", str(tmp_path / "r")]) == EXIT_INPUT


def test_negative_lambda_is_rejected(capsys, tmp_path):
    code = main(["train", "--iterations", "1", "--lambda-bc", "-1", "--out", str(tmp_path)])
    assert code == EXIT_INPUT
    assert "lambda_bc" in error_record(capsys)["message"]


def test_missing_config_file(tmp_path):
    assert main(["scenes", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path)]) == EXIT_INPUT


# ---- config echo and layering ---------------------------------------------------------------------

def test_config_file_values_and_flag_override(tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"count": 3, "seed": 9}))
    out = tmp_path / "o"
    assert main(["scenes", "--config", str(conf), "--seed", "1", "--out", str(out)]) == EXIT_OK
    echoed = json.loads((out / "config.json").read_text())
    assert echoed["count"] == 3          # from the file
    assert echoed["seed"] == 1           # flag wins
    assert len(list(out.glob("*/scenario.json"))) == 3


# ---- pipeline ------------------------------------------------------------------------------------

def test_synth_mode_split_and_determinism(dataset, suite, tmp_path):
    recs = [r for r in read_manifest(suite) if r["status"] == "ok"]
    modes = {}
    for r in recs:
        modes[r["mode"]] = modes.get(r["mode"], 0) + 1
    assert sorted(modes.values(), reverse=True) == [4, 3, 3]
    again = tmp_path / "again"
    assert main(["synth", str(dataset), "--count", "10", "--seed", "4", "--out", str(again)]) == EXIT_OK
    assert (again / "manifest.jsonl").read_bytes() == (suite / "manifest.jsonl").read_bytes()


def test_commands_do_not_mutate_inputs(dataset, suite, tmp_path):
    before = tree_hash(dataset), tree_hash(suite)
    main(["synth", str(dataset), "--count", "2", "--out", str(tmp_path / "s")])
    main(["rfb", str(suite), "--out", str(tmp_path / "r")])
    assert (tree_hash(dataset), tree_hash(suite)) == before


def test_rfb_reports(capsys, suite, tmp_path):
    capsys.readouterr()
    assert main(["rfb", str(suite), "--out", str(tmp_path / "v")]) == EXIT_OK
    assert "DAF" in capsys.readouterr().out
    assert main(["rfb", str(suite), "--model", "optimistic", "--out", str(tmp_path / "o")]) == EXIT_OK
    ver = json.loads((tmp_path / "v" / "rfb_veridical.json").read_text())
    opt = json.loads((tmp_path / "o" / "rfb_optimistic.json").read_text())
    assert ver["aggregate"]["daf"] == 1.0
    assert opt["aggregate"]["f_iou"] < ver["aggregate"]["f_iou"]
    assert (tmp_path / "v" / "rfb_veridical.csv").exists()


def test_forecast_reward_and_export(capsys, suite, tmp_path):
    sc = next(p.parent for p in sorted(suite.rglob("scenario.json")))
    fdir = tmp_path / "f"
    assert main(["forecast", str(sc), "--out", str(fdir)]) == EXIT_OK
    assert (fdir / "forecast.json").exists()
    capsys.readouterr()
    assert main(["reward", str(sc)]) == EXIT_OK
    breakdown = json.loads(capsys.readouterr().out)
    assert "total" in breakdown
    edir = tmp_path / "e"
    assert main(["export", str(fdir), "--format", "csv", "--out", str(edir)]) == EXIT_OK
    frames = json.loads((fdir / "forecast.json").read_text())["frame_paths"]
    assert len(list(edir.glob("*.csv"))) == len(frames)


def test_train_zero_iterations_keeps_initial_policy(tmp_path):
    out = tmp_path / "t"
    assert main(["train", "--iterations", "0", "--group-size", "8", "--out", str(out)]) == EXIT_OK
    pol = PolicyParams.from_dict(json.loads((out / "policy.json").read_text()))
    assert np.all(pol.mu == 0.0)
    assert (out / "train_log.jsonl").read_text() == ""
    assert json.loads((out / "config.json").read_text())["train"]["iterations"] == 0


def test_train_short_run_is_deterministic(tmp_path):
    args = ["train", "--iterations", "3", "--group-size", "8", "--seed", "5"]
    assert main(args + ["--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(args + ["--out", str(tmp_path / "b")]) == EXIT_OK
    for name in ("train_log.jsonl", "policy.json", "final_reward.json", "mean_trajectory.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert len((tmp_path / "a" / "train_log.jsonl").read_text().splitlines()) == 3


# ---- export --------------------------------------------------------------------------------------

def test_empty_grid_exports_zero_vertices(tmp_path):
    p = export_grid(SemanticGrid(SMALL), tmp_path / "e.ply", "ply")
    assert read_ply_vertex_count(p) == 0
    assert p.read_text().rstrip().endswith("end_header")


def test_ply_vertex_count_matches_occupied(tmp_path):
    g = random_grid(np.random.default_rng(0), SMALL, 0.1)
    n = int(g.occupied().sum())
    p = export_grid(g, tmp_path / "g.ply", "ply")
    assert read_ply_vertex_count(p) == n
    assert len(p.read_text().splitlines()) == 11 + n


def test_csv_rows_and_labels(tmp_path):
    g = random_grid(np.random.default_rng(1), SMALL, 0.05)
    rows = (export_grid(g, tmp_path / "g.csv", "csv").read_text().splitlines())
    assert rows[0] == "x,y,z,label"
    assert len(rows) - 1 == int(g.occupied().sum())
    labels = {int(r.split(",")[3]) for r in rows[1:]}
    assert labels <= set(range(1, 10))


def test_unsupported_format(tmp_path):
    g = SemanticGrid(SMALL)
    with pytest.raises(UnsupportedFormatError):
        export_grid(g, tmp_path / "g.obj", "obj")
    src = write_grid(tmp_path / "g.iocc", g)
    assert main(["export", str(src), "--format", "obj", "--out", str(tmp_path / "o")]) == EXIT_USAGE
    assert main(["export", str(src), "--out", str(tmp_path / "o")]) == EXIT_OK
    assert read_ply_vertex_count(tmp_path / "o" / "g.ply") == 0
