import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import boxed_world
from tapmap.gridmap import (CellState, GroundTruthWorld, InvalidPose, OccupancyGrid, Pose,
                            diff_map, integrate_scan, raycast_scan)


def fine_step_distance(world, pose, angle, max_range, step=0.1):
    """Walk the ray in ``step``-cell increments; distance to the first occupied sample."""
    res = world.resolution
    t = np.arange(0.0, max_range / res + step, step)
    t = t[t <= max_range / res]
    cols = np.floor(pose.x / res + t * math.cos(angle)).astype(int)
    rows = np.floor(pose.y / res + t * math.sin(angle)).astype(int)
    h, w = world.shape
    inside = (rows >= 0) & (rows < h) & (cols >= 0) & (cols < w)
    if not inside.all():
        t, rows, cols = t[:np.argmin(inside)], rows[:np.argmin(inside)], cols[:np.argmin(inside)]
    hit = world.occupied[rows, cols]
    if hit.any():
        return float(t[np.argmax(hit)] * res), True
    return max_range, False


def test_empty_room_rays_hit_walls_at_analytic_distance():
    world = boxed_world(21, 21, thick=1, res=1.0)
    pose = Pose(10.5, 10.5)
    scan = raycast_scan(world, pose, max_range=30.0, n_rays=90)
    for ray in scan:
        c, s = math.cos(ray.angle), math.sin(ray.angle)
        tx = 9.5 / abs(c) if abs(c) > 1e-12 else math.inf
        ty = 9.5 / abs(s) if abs(s) > 1e-12 else math.inf
        assert ray.hit
        assert ray.distance == pytest.approx(min(tx, ty), abs=1e-9)


def _cluttered(seed, size=60, blocks=60):
    rng = np.random.default_rng(seed)
    mats = np.full((size, size), -1, dtype=np.int8)
    for r, c in rng.integers(0, size - 2, size=(blocks, 2)):
        mats[r:r + 2, c:c + 2] = 1
    mats[28:33, 28:33] = -1
    return GroundTruthWorld(mats, 0.05)


def _chord(world, pose, angle, t_enter):
    """Length (cells) of the ray inside the cell it enters at ``t_enter`` (cells)."""
    res = world.resolution
    dx, dy = math.cos(angle), math.sin(angle)
    x, y = pose.x / res + (t_enter + 1e-9) * dx, pose.y / res + (t_enter + 1e-9) * dy
    c, r = math.floor(x), math.floor(y)
    tx = ((c + (dx > 0)) - pose.x / res) / dx if dx else math.inf
    ty = ((r + (dy > 0)) - pose.y / res) / dy if dy else math.inf
    return min(tx, ty) - t_enter


@pytest.mark.parametrize("seed", range(3))
def test_rays_match_fine_step_oracle(seed):
    world = _cluttered(seed)
    pose = Pose(30.5 * 0.05, 30.5 * 0.05, 0.3)
    clipped = 0
    for ray in raycast_scan(world, pose, max_range=2.5, n_rays=360):
        ref, hit = fine_step_distance(world, pose, ray.angle, 2.5)
        # the stepped walk only ever samples cells on the ray, so it can't be early
        assert ray.distance <= ref + 1e-9
        if abs(ray.distance - ref) > world.resolution:
            # it skipped the hit cell: legal only if the ray clips a corner by < 1/10 cell
            assert ray.hit
            assert _chord(world, pose, ray.angle, ray.distance / world.resolution) < 0.1
            clipped += 1
        else:
            assert hit == ray.hit or abs(ray.distance - 2.5) <= world.resolution
    assert clipped < 36


def test_rays_exact_against_very_fine_steps():
    # single-cell clutter: a coarse walk can step over a clipped corner, so
    # compare against a 1/1000-cell walk with a tight tolerance instead
    rng = np.random.default_rng(7)
    mats = np.where(rng.random((60, 60)) < 0.08, 1, -1).astype(np.int8)
    mats[30, 30] = -1
    world = GroundTruthWorld(mats, 0.05)
    pose = Pose(30.5 * 0.05, 30.5 * 0.05, 0.3)
    for ray in raycast_scan(world, pose, max_range=2.5, n_rays=360):
        ref, hit = fine_step_distance(world, pose, ray.angle, 2.5, step=1e-3)
        assert hit == ray.hit
        assert abs(ray.distance - ref) <= 1e-3 * world.resolution


def test_no_hit_reports_max_range():
    world = GroundTruthWorld(np.full((40, 40), -1, dtype=np.int8), 0.05)
    scan = raycast_scan(world, Pose(1.0, 1.0), max_range=0.5, n_rays=16)
    assert all(r.distance == 0.5 and not r.hit for r in scan)


@pytest.mark.parametrize("pose", [Pose(-1.0, 0.5), Pose(0.5, 5.0), Pose(0.02, 0.02)])
def test_invalid_poses(pose):
    world = boxed_world(20, 20, thick=1)
    with pytest.raises(InvalidPose):
        raycast_scan(world, pose)


def test_bad_scan_arguments():
    world = boxed_world(20, 20, thick=1)
    with pytest.raises(ValueError):
        raycast_scan(world, Pose(0.5, 0.5), n_rays=0)
    with pytest.raises(ValueError):
        raycast_scan(world, Pose(0.5, 0.5), max_range=0.0)


def test_integrate_marks_free_path_and_hit_cells():
    world = boxed_world(30, 30, thick=1)
    pose = Pose(0.75, 0.75)
    grid = integrate_scan(world.blank_grid(), pose, raycast_scan(world, pose, 4.0, 720))
    truth = world.truth_grid()
    known = grid.cells != CellState.UNKNOWN
    # everything observed agrees with the truth, and the room is fully seen
    assert np.array_equal(grid.cells[known], truth.cells[known])
    assert grid.free[1:-1, 1:-1].all()
    assert grid.occupied[0, 1:-1].sum() > 20


def test_occupied_never_reverts():
    world = boxed_world(30, 30, thick=1)
    grid = world.blank_grid()
    grid.cells[10, 10] = CellState.OCCUPIED
    pose = Pose(0.75, 0.75)
    out = integrate_scan(grid, pose, raycast_scan(world, pose, 4.0, 720))
    assert out.cells[10, 10] == CellState.OCCUPIED
    assert grid.known_count() == 1  # input untouched


def test_diff_map():
    a = OccupancyGrid(np.array([[0, 1], [2, 0]], dtype=np.int8))
    b = OccupancyGrid(np.array([[1, 1], [2, 2]], dtype=np.int8))
    d = diff_map(b, a)
    assert d.cells.tolist() == [[1, 0], [0, 2]]
    assert np.array_equal(diff_map(b, None).cells, b.cells)
    with pytest.raises(ValueError):
        diff_map(b, OccupancyGrid(np.zeros((3, 2), dtype=np.int8)))


@given(st.integers(0, 99), st.integers(0, 99), st.floats(-5, 5), st.floats(-5, 5),
       st.sampled_from([0.01, 0.05, 0.1]))
def test_cell_world_round_trip(r, c, ox, oy, res):
    grid = OccupancyGrid.unknown((100, 100), res, (ox, oy))
    assert grid.world_to_cell(*grid.cell_to_world(r, c)) == (r, c)


def test_world_rejects_bad_codes():
    with pytest.raises(ValueError):
        GroundTruthWorld(np.array([[7]]))
    with pytest.raises(ValueError):
        OccupancyGrid(np.zeros(4))


def test_fused_scans_never_contradict_the_world():
    # grazing rays enter a free cell and a wall cell almost together; only the wall is a hit
    from conftest import random_room
    for seed in range(3):
        world, _ = random_room(seed)
        grid = world.blank_grid()
        rng = np.random.default_rng(seed)
        free = np.argwhere(~world.occupied)
        for r, c in free[rng.choice(len(free), 8, replace=False)]:
            pose = Pose((c + rng.random()) * 0.05, (r + rng.random()) * 0.05, rng.uniform(0, 6.28))
            grid = integrate_scan(grid, pose, raycast_scan(world, pose, 4.0, 1440))
        known = grid.cells != CellState.UNKNOWN
        assert np.array_equal(grid.occupied[known], world.occupied[known])
