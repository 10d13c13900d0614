import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from cfworld.geometry import Pose2D, RigidTransform, Trajectory
from cfworld.grid import (DEFAULT_GEOMETRY, FREE_BIT, GridGeometry, SemanticGrid, SemanticLabel,
                          decode_mask, encode_labels, label_set_at, mask_to_voxels, voxels_to_mask,
                          world_to_voxel)
from cfworld.gridio import (BadMagicError, TruncatedPayloadError, VersionMismatchError, grid_from_bytes,
                            grid_to_bytes, read_grid, write_grid)
from cfworld.voxel import rasterize_footprint, resample

from conftest import SMALL, grids, random_grid


# ---- labels and masks ---------------------------------------------------------------------

def test_label_codes_fit_sixteen_bits():
    assert [int(l) for l in SemanticLabel] == list(range(10))
    assert all(l.bit < 1 << 16 for l in SemanticLabel)


def test_encode_decode_round_trip():
    m = encode_labels([SemanticLabel.EGO, SemanticLabel.DRIVABLE])
    assert m == (1 << 8) | (1 << 1)
    assert decode_mask(m) == {SemanticLabel.EGO, SemanticLabel.DRIVABLE}
    assert encode_labels([SemanticLabel.FREE]) == 0


def test_free_bit_cannot_mix_with_occupied_labels():
    with pytest.raises(ValueError):
        decode_mask(FREE_BIT | SemanticLabel.VEHICLE.bit)
    with pytest.raises(ValueError):
        decode_mask(1 << 16)


def test_default_geometry_matches_published_layout():
    g = DEFAULT_GEOMETRY
    assert g.shape == (200, 200, 16)
    assert g.voxel_size == 0.4
    assert g.origin == (-40.0, -40.0, -1.0)
    assert np.allclose(g.upper, (40.0, 40.0, 5.4))


@pytest.mark.parametrize("bad", [dict(voxel_size=0.0), dict(voxel_size=-1.0), dict(nx=0),
                                 dict(origin=(0.0, float("nan"), 0.0))])
def test_geometry_validation(bad):
    with pytest.raises(ValueError):
        GridGeometry(**bad)


def test_grid_rejects_wrong_shape_and_is_immutable():
    with pytest.raises(ValueError):
        SemanticGrid(SMALL, np.zeros((3, 3, 3), dtype=np.uint16))
    g = SemanticGrid(SMALL)
    with pytest.raises((AttributeError, ValueError)):
        g.data[0, 0, 0] = 5
    with pytest.raises(AttributeError):
        g.geometry = DEFAULT_GEOMETRY


def test_flat_order_is_x_fastest():
    g = SMALL
    mask = np.zeros(g.shape, dtype=bool)
    mask[1, 0, 0] = True
    mask[0, 1, 0] = True
    mask[0, 0, 1] = True
    assert mask_to_voxels(mask).tolist() == [1, g.nx, g.nx * g.ny]
    assert np.array_equal(voxels_to_mask(mask_to_voxels(mask), g), mask)
    assert g.unflatten(g.flat_index(3, 4, 5)).tolist() == [3, 4, 5]


# ---- world_to_voxel / label_set_at ----------------------------------------------------------

def test_world_to_voxel_origin_corner():
    assert world_to_voxel(DEFAULT_GEOMETRY, DEFAULT_GEOMETRY.origin) == (0, 0, 0)


def test_world_to_voxel_one_voxel_step():
    o = np.asarray(DEFAULT_GEOMETRY.origin)
    assert world_to_voxel(DEFAULT_GEOMETRY, o + 0.4) == (1, 1, 1)


def test_world_to_voxel_beyond_bound_is_empty():
    # +x bound is origin + nx * voxel_size = 40 m; 41 m beyond it is far outside
    assert world_to_voxel(DEFAULT_GEOMETRY, (40.0 + 41.0, 0.0, 0.0)) is None
    assert world_to_voxel(DEFAULT_GEOMETRY, (40.0, 0.0, 0.0)) is None
    assert world_to_voxel(DEFAULT_GEOMETRY, (39.99, 0.0, 0.0)) == (199, 100, 2)


def test_world_to_voxel_rejects_non_finite():
    with pytest.raises(ValueError):
        world_to_voxel(DEFAULT_GEOMETRY, (np.nan, 0, 0))


def test_label_set_at_examples():
    data = np.zeros(SMALL.shape, dtype=np.uint16)
    data[0, 0, 0] = 1 << 1
    data[1, 0, 0] = (1 << 8) | (1 << 1)
    g = SemanticGrid(SMALL, data)
    assert label_set_at(g, (0, 0, 0)) == {SemanticLabel.DRIVABLE}
    assert label_set_at(g, (1, 0, 0)) == {SemanticLabel.EGO, SemanticLabel.DRIVABLE}
    assert label_set_at(g, (2, 0, 0)) == frozenset()
    with pytest.raises(IndexError):
        label_set_at(g, (SMALL.nx, 0, 0))


# ---- transforms and trajectories -------------------------------------------------------------

@given(st.floats(-math.pi, math.pi), st.floats(-50, 50), st.floats(-50, 50))
def test_transform_compose_with_inverse_is_identity(yaw, dx, dy):
    T = RigidTransform(yaw, dx, dy)
    I = T.compose(T.inverse())
    assert abs(math.remainder(I.yaw, 2 * math.pi)) < 1e-9
    assert abs(I.dx) < 1e-9 and abs(I.dy) < 1e-9


def test_between_maps_target_frame_into_source_frame():
    a = Pose2D(3.0, 1.0, 0.3)
    b = Pose2D(-2.0, 4.0, -1.1)
    T = RigidTransform.between(a, b)
    # the origin of b's frame lands on b's position expressed in a's frame
    p = T.apply(np.zeros((1, 2)))[0]
    c, s = math.cos(a.yaw), math.sin(a.yaw)
    d = np.array([b.x - a.x, b.y - a.y])
    assert np.allclose(p, [c * d[0] + s * d[1], -s * d[0] + c * d[1]])


def test_trajectory_validation():
    with pytest.raises(ValueError):
        Trajectory(np.zeros((2, 2)), np.zeros(3))
    with pytest.raises(ValueError):
        Trajectory(np.array([[np.inf, 0.0]]), np.zeros(1))
    with pytest.raises(ValueError):
        Trajectory(np.zeros((1, 2)), np.zeros(1), dt=0.0)
    fast = Trajectory.from_positions([[20.0, 0.0]])
    assert not fast.is_plausible()
    with pytest.raises(ValueError):
        fast.check_plausible()
    assert Trajectory.constant_velocity(Pose2D(), 30.0, 6).is_plausible()


def test_trajectory_dict_round_trip_and_uniform_times():
    t = Trajectory.constant_velocity(Pose2D(1.0, 2.0, 0.5), 4.0, 6)
    assert np.allclose(np.diff(t.times), 0.5)
    assert Trajectory.from_dict(t.to_dict()) == t
    bad = t.to_dict()
    bad["waypoints"][2][0] += 0.1
    with pytest.raises(ValueError):
        Trajectory.from_dict(bad)


def test_displacement_facing_yaw():
    t = Trajectory.from_positions([[1.0, 0.0], [1.0, 1.0], [1.0, 1.0]], Pose2D(0, 0, 0.7))
    assert np.allclose(t.yaw, [0.0, math.pi / 2, math.pi / 2])


# ---- resample ------------------------------------------------------------------------------

@settings(max_examples=30, deadline=None)
@given(grids())
def test_resample_identity_is_exact(g):
    assert resample(g, RigidTransform.identity()) == g


def test_resample_one_voxel_translation_shifts_indices():
    g = random_grid(np.random.default_rng(0), density=0.5)
    out = resample(g, RigidTransform(0.0, 0.4, 0.0))
    # output voxel i holds source voxel i + 1; the trailing slab is Free
    assert np.array_equal(out.data[:-1], g.data[1:])
    assert not out.data[-1].any()


def test_resample_quarter_turn_preserves_occupancy_count():
    geom = GridGeometry(60, 60, 4, 0.4, (-12.0, -12.0, -1.0))
    g = random_grid(np.random.default_rng(1), geom, density=0.3)
    out = resample(g, RigidTransform.about_point(math.pi / 2, (0.0, 0.0)))
    before, after = g.count_occupied(), out.count_occupied()
    assert abs(after - before) <= 0.01 * before


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.floats(-2.0, 2.0), st.floats(-2.0, 2.0))
def test_resample_round_trip_agrees_on_interior(seed, dx, dy):
    # |translation| <= 5 voxels; occupancy kept away from the border so nothing leaves the grid.
    # Half-voxel offsets are ties in both directions; see the dedicated test below.
    geom = SMALL
    for d in (dx, dy):
        assume(abs((d / geom.voxel_size) % 1.0 - 0.5) > 1e-6)
    g = random_grid(np.random.default_rng(seed), geom, density=0.4)
    data = g.copy_data()
    data[:6], data[-6:], data[:, :6], data[:, -6:] = 0, 0, 0, 0
    g = g.with_data(data)
    T = RigidTransform(0.0, dx, dy)
    back = resample(resample(g, T), T.inverse())
    occ = g.occupied()
    agree = np.count_nonzero((back.data == g.data) & occ)
    assert agree >= 0.99 * np.count_nonzero(occ)


def test_half_voxel_round_trip_shifts_by_one_voxel():
    # both lookups land on a voxel boundary; the half-open rule takes the upper voxel each time,
    # so +2.5 then -2.5 voxels becomes -3 then +2
    g = SemanticGrid(SMALL)
    data = g.copy_data()
    data[20, 20, 2] = SemanticLabel.VEHICLE.bit
    g = g.with_data(data)
    T = RigidTransform(0.0, 0.0, 2.5 * SMALL.voxel_size)
    back = resample(resample(g, T), T.inverse())
    assert np.argwhere(back.occupied()).tolist() == [[20, 19, 2]]


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.integers(-5, 5), st.integers(-5, 5))
def test_integer_translation_conserves_occupancy(seed, ix, iy):
    g = random_grid(np.random.default_rng(seed), density=0.3)
    data = g.copy_data()
    data[:6], data[-6:], data[:, :6], data[:, -6:] = 0, 0, 0, 0
    g = g.with_data(data)
    out = resample(g, RigidTransform(0.0, 0.4 * ix, 0.4 * iy))
    assert out.count_occupied() == g.count_occupied()


# ---- rasterize_footprint -------------------------------------------------------------------------

def test_small_box_centered_on_voxel_center_covers_eight_voxels():
    c = SMALL.voxel_center((10, 10, 3))
    vox = rasterize_footprint(SMALL, (c[0], c[1], 0.0), (0.8, 0.8, 0.8), c[2] - 0.4)
    assert len(vox) == 8


def test_box_outside_grid_is_empty():
    assert len(rasterize_footprint(SMALL, (100.0, 100.0, 0.0), (1.0, 1.0, 1.0), 0.0)) == 0


def test_ego_box_on_default_grid_center():
    vox = rasterize_footprint(DEFAULT_GEOMETRY, Pose2D(0.0, 0.0, 0.0), (4.0, 2.0, 1.6), -0.2)
    assert len(vox) == 10 * 5 * 4


def _brute_force_box(geom, pose, extent, z_base):
    x, y, yaw = pose
    L, W, H = extent
    out = []
    for iz in range(geom.nz):
        for iy in range(geom.ny):
            for ix in range(geom.nx):
                cx, cy, cz = geom.voxel_center((ix, iy, iz))
                u = math.cos(yaw) * (cx - x) + math.sin(yaw) * (cy - y)
                w = -math.sin(yaw) * (cx - x) + math.cos(yaw) * (cy - y)
                if (-L / 2 - 1e-6 <= u < L / 2 - 1e-6 and -W / 2 - 1e-6 <= w < W / 2 - 1e-6
                        and -1e-6 <= cz - z_base < H - 1e-6):
                    out.append(ix + geom.nx * (iy + geom.ny * iz))
    return out


@settings(max_examples=15, deadline=None)
@given(st.floats(-4, 4), st.floats(-4, 4), st.floats(-math.pi, math.pi),
       st.floats(0.3, 5), st.floats(0.3, 3), st.floats(0.3, 2))
def test_rasterize_matches_center_inclusion_oracle(x, y, yaw, L, W, H):
    geom = GridGeometry(24, 24, 6, 0.4, (-4.8, -4.8, -1.0))
    got = rasterize_footprint(geom, (x, y, yaw), (L, W, H), -0.6).tolist()
    assert got == _brute_force_box(geom, (x, y, yaw), (L, W, H), -0.6)


def test_rasterize_rejects_non_positive_extent():
    with pytest.raises(ValueError):
        rasterize_footprint(SMALL, (0, 0, 0), (0.0, 1.0, 1.0), 0.0)


# ---- IOCC serialization ----------------------------------------------------------------------

def test_default_grid_round_trip(tmp_path):
    g = random_grid(np.random.default_rng(2), DEFAULT_GEOMETRY, density=0.05)
    p = write_grid(tmp_path / "g.iocc", g)
    back = read_grid(p)
    assert back == g
    assert back.geometry == g.geometry
    assert p.read_bytes() == grid_to_bytes(back)


def test_header_layout():
    g = SemanticGrid(GridGeometry(2, 3, 4, 0.4, (-1.0, -2.0, -3.0)))
    buf = grid_to_bytes(g)
    assert buf[:4] == b"IOCC"
    assert int.from_bytes(buf[4:6], "little") == 1
    assert int.from_bytes(buf[6:10], "little") == 2
    assert int.from_bytes(buf[34:36], "little") == 16
    assert len(buf) == 36 + 2 * 24


def test_bad_magic():
    buf = bytearray(grid_to_bytes(SemanticGrid(SMALL)))
    buf[:4] = b"NOPE"
    with pytest.raises(BadMagicError):
        grid_from_bytes(bytes(buf))


def test_version_mismatch():
    buf = bytearray(grid_to_bytes(SemanticGrid(SMALL)))
    buf[4:6] = (2).to_bytes(2, "little")
    with pytest.raises(VersionMismatchError):
        grid_from_bytes(bytes(buf))


def test_truncated_payload():
    buf = grid_to_bytes(SemanticGrid(SMALL))
    with pytest.raises(TruncatedPayloadError):
        grid_from_bytes(buf[:-2])
    with pytest.raises(TruncatedPayloadError):
        grid_from_bytes(buf[:10])


@settings(max_examples=20, deadline=None)
@given(grids())
def test_serialization_round_trip_property(g):
    assert grid_from_bytes(grid_to_bytes(g)) == g
