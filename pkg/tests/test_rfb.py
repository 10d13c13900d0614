import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cfworld.curriculum import generate_curriculum
from cfworld.geometry import Trajectory
from cfworld.grid import BUILDING, DRIVABLE, EGO, VEHICLE, GridGeometry
from cfworld.rfb import (EmptySuiteError, UndefinedMetricError, critical_columns, daf, f_iou, g_iou,
                         gt_instances, run_benchmark, run_on_scenarios, score_scenario)

from conftest import random_grid

GEOM = GridGeometry(30, 30, 6, 0.4, (-6.0, -6.0, -1.0))
K = 2


def frames(fill=None):
    data = np.zeros((K,) + GEOM.shape, dtype=np.uint16)
    if fill is not None:
        fill(data)
    return data


def still(K=K):
    return Trajectory.from_positions([[0.0, 0.0]] * K)


# ---- G-IoU -------------------------------------------------------------------------------------------

def _scene(d):
    d[..., 1] = DRIVABLE
    d[:, 20:24, 4:8, 2:5] |= BUILDING
    d[:, 5:9, 20:22, 2:4] |= VEHICLE


def test_g_iou_identity_and_empty_prediction():
    gt = frames(_scene)
    assert g_iou(gt, gt) == 1.0
    assert g_iou(frames(), gt) == 0.0


def test_g_iou_half_of_each_class():
    gt = frames(_scene)
    pred = frames()
    # keep the lower half (by x) of every class's voxels, rest Free
    for b in (DRIVABLE, BUILDING, VEHICLE):
        m = (gt & b) != 0
        xs = np.nonzero(m.any(axis=(0, 2, 3)))[0]
        keep = np.zeros_like(m)
        keep[:, xs[: len(xs) // 2]] = m[:, xs[: len(xs) // 2]]
        pred[keep] |= np.uint16(b)
    assert g_iou(pred, gt) == pytest.approx(0.5)


def test_g_iou_ignores_ego_bit():
    gt = frames(_scene)
    pred = gt.copy()
    pred[:, 14:16, 14:16, 2:4] |= EGO
    assert g_iou(pred, gt) == 1.0


def test_g_iou_shape_mismatch():
    with pytest.raises(ValueError):
        g_iou(frames(), np.zeros((3,) + GEOM.shape, dtype=np.uint16))


# ---- f-IoU -------------------------------------------------------------------------------------------

def _obstacle(d):
    d[:, 16:18, 14:16, 2:4] |= VEHICLE      # within 3 m of the (stationary) ego path


def test_f_iou_identity():
    gt = frames(_obstacle)
    assert f_iou(gt, gt, still(), GEOM) == 1.0


def test_f_iou_vanished_obstacle_scores_zero():
    gt = frames(_obstacle)
    assert f_iou(frames(), gt, still(), GEOM) == 0.0


def test_f_iou_half_displaced_obstacle():
    gt = frames(lambda d: d.__setitem__((slice(None), slice(14, 18), slice(14, 16), slice(2, 4)), VEHICLE))
    pred = frames(lambda d: d.__setitem__((slice(None), slice(16, 20), slice(14, 16), slice(2, 4)), VEHICLE))
    # half of the gt voxels predicted, the other half misplaced: |inter| = n/2, |union| = 3n/2
    assert f_iou(pred, gt, still(), GEOM) == pytest.approx(1 / 3)


def test_f_iou_outside_critical_volume_is_ignored():
    gt = frames(_obstacle)
    pred = gt.copy()
    pred[:, 0:2, 0:2, 2:4] |= BUILDING      # far corner, > 3 m away
    assert f_iou(pred, gt, still(), GEOM) == 1.0


def test_f_iou_empty_critical_volume():
    with pytest.raises(UndefinedMetricError):
        f_iou(frames(), frames(), still(), GEOM, crit_radius=3.0,
              valid=np.zeros((K, GEOM.nx, GEOM.ny), dtype=bool))


def test_critical_columns_follow_remaining_path():
    traj = Trajectory.from_positions([[2.0, 0.0], [4.0, 0.0]])
    crit = critical_columns(GEOM, traj, 1.0)
    xs = GEOM.centers(0)
    # frame 0 covers x in [-1, 3] along y ~ 0, frame 1 only the disc around the origin
    assert crit[0, np.searchsorted(xs, 2.6), 15]
    assert not crit[1, np.searchsorted(xs, 2.6), 15]


# ---- DAF ---------------------------------------------------------------------------------------------

def _agents():
    a = np.zeros(GEOM.shape, dtype=bool)
    b = np.zeros(GEOM.shape, dtype=bool)
    a[2:4, 2:4, 2:4] = True
    b[10:12, 10:12, 2:4] = True
    return [{1: a, 2: b}, {1: a, 2: b}]


def test_daf_examples():
    gt = _agents()
    assert daf(gt, gt) == 1.0
    assert daf([{}, {}], gt) == 0.0
    one = [{1: f[1]} for f in gt]
    assert daf(one, gt) == pytest.approx(0.5)


def test_daf_overlap_matching_ignores_ids():
    gt = _agents()
    relabelled = [{7: f[1], 8: f[2]} for f in gt]
    assert daf(relabelled, gt, match="overlap") == 1.0
    assert daf(relabelled, gt, match="id") == 0.0
    assert daf(relabelled, gt) == 1.0


def test_daf_without_agents_is_one():
    assert daf([{}, {}], [{}, {}]) == 1.0
    with pytest.raises(ValueError):
        daf([{}], [{}], match="nearest")


# ---- metric sanity -------------------------------------------------------------------------------------

def test_metrics_are_one_on_perfect_prediction(source_scenes):
    for sc in source_scenes:
        gt = np.stack([g.data for g in sc.original_futures])
        traj = sc.original_traj
        assert g_iou(gt, gt) == 1.0
        assert f_iou(gt, gt, traj, sc.geometry) == 1.0
        inst = gt_instances(sc)
        assert daf(inst, inst) == 1.0


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**31), st.integers(0, 2**31), st.floats(0.0, 0.5), st.floats(0.0, 0.5))
def test_metrics_bounded_on_random_pairs(s1, s2, d1, d2):
    geom = GridGeometry(12, 12, 4, 0.4, (-2.4, -2.4, -1.0))
    p = random_grid(np.random.default_rng(s1), geom, d1).data[None]
    g = random_grid(np.random.default_rng(s2), geom, d2).data[None]
    assert 0.0 <= g_iou(p, g) <= 1.0
    assert 0.0 <= f_iou(p, g, still(1), geom) <= 1.0
    pa = [{0: (p[0] & VEHICLE) != 0}]
    ga = [{0: (g[0] & VEHICLE) != 0}]
    assert 0.0 <= daf(pa, ga) <= 1.0


# ---- benchmark -----------------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def suite(tmp_path_factory, source_scenes):
    out = tmp_path_factory.mktemp("suite")
    generate_curriculum(source_scenes, out, 10, seed=5)
    return out


def test_veridical_scores_on_suite(suite):
    rep = run_benchmark("veridical", suite)
    agg = rep.aggregate()
    assert agg["n_errors"] == 0
    assert agg["g_iou"] >= 0.95
    assert agg["daf"] == 1.0


def test_optimistic_loses_on_collision_scenarios(suite):
    ver = {s.id: s for s in run_benchmark("veridical", suite).scenarios}
    opt = {s.id: s for s in run_benchmark("optimistic", suite).scenarios}
    dyn = [sid for sid, s in ver.items() if s.mode == "DynamicCollision"]
    assert dyn
    for sid in dyn:
        assert opt[sid].daf < ver[sid].daf
        assert opt[sid].f_iou < ver[sid].f_iou


def test_report_files(suite, tmp_path):
    rep = run_benchmark("veridical", suite)
    j, c = rep.write(tmp_path)
    assert j.exists() and c.exists()
    assert len(c.read_text().splitlines()) == rep.count + 1
    assert "G-IoU" in rep.summary_line()


def test_empty_suite(tmp_path, source_scenes):
    generate_curriculum(source_scenes[:1], tmp_path, 0)
    with pytest.raises(EmptySuiteError):
        run_benchmark("veridical", tmp_path)
    with pytest.raises(ValueError):
        run_benchmark("clairvoyant", tmp_path)


def test_in_memory_runner_matches_scenario_scoring(curriculum):
    scs = [it.scenario for it in curriculum[:3]]
    rep = run_on_scenarios("veridical", scs)
    for s, sc in zip(rep.scenarios, scs):
        assert s == score_scenario(sc, "veridical", sid=sc.name)
