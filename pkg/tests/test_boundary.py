import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_grid
from tapmap.boundary import (BoundaryComponent, PlannerConfig, analyze, boundary_mask,
                             connected_components, corner_response, detect_corners,
                             extract_boundary, polyline_arc, split_segments)
from tapmap.gridmap import CellState, OccupancyGrid


def scan_boundary(cells):
    """Definition, cell by cell: occupied with a free 8-neighbour."""
    h, w = cells.shape
    out = set()
    for r in range(h):
        for c in range(w):
            if cells[r, c] != CellState.OCCUPIED:
                continue
            for dr in (-1, 0, 1):
                for dc in (-1, 0, 1):
                    rr, cc = r + dr, c + dc
                    if (dr or dc) and 0 <= rr < h and 0 <= cc < w and cells[rr, cc] == CellState.FREE:
                        out.add((r, c))
    return out


def union_find_components(pixels):
    parent = {p: p for p in pixels}

    def find(p):
        while parent[p] != p:
            parent[p] = parent[parent[p]]
            p = parent[p]
        return p

    for r, c in pixels:
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                q = (r + dr, c + dc)
                if q in parent:
                    parent[find(q)] = find((r, c))
    groups = {}
    for p in pixels:
        groups.setdefault(find(p), set()).add(p)
    return {frozenset(g) for g in groups.values()}


def naive_corner_response(occ, box=3, window=5):
    """Same pipeline written as explicit loops over edge-padded images."""
    def mean_filter(img, k):
        p = np.pad(img, k // 2, mode="edge")
        out = np.zeros_like(img)
        for r in range(img.shape[0]):
            for c in range(img.shape[1]):
                out[r, c] = p[r:r + k, c:c + k].mean()
        return out

    img = mean_filter(occ.astype(float), box)
    p = np.pad(img, 1, mode="edge")
    h, w = img.shape
    gx = np.zeros_like(img)
    gy = np.zeros_like(img)
    sm = np.array([1.0, 2.0, 1.0])
    for r in range(h):
        for c in range(w):
            blk = p[r:r + 3, c:c + 3]
            gx[r, c] = sm @ (blk[:, 2] - blk[:, 0])
            gy[r, c] = sm @ (blk[2, :] - blk[0, :])
    sxx, syy, sxy = (mean_filter(a, window) for a in (gx * gx, gy * gy, gx * gy))
    out = np.zeros_like(img)
    for r in range(h):
        for c in range(w):
            m = np.array([[sxx[r, c], sxy[r, c]], [sxy[r, c], syy[r, c]]])
            out[r, c] = max(np.linalg.eigvalsh(m)[0], 0.0)
    return out


def test_boundary_matches_exhaustive_scan_on_50_maps():
    rng = np.random.default_rng(0)
    for _ in range(50):
        grid = random_grid(rng, (64, 64), p_occ=rng.uniform(0.1, 0.5), p_unknown=0.2)
        assert extract_boundary(grid) == scan_boundary(grid.cells)


@given(st.integers(0, 10_000))
def test_boundary_property(seed):
    grid = random_grid(np.random.default_rng(seed), (12, 15))
    assert extract_boundary(grid) == scan_boundary(grid.cells)


def test_unknown_neighbours_do_not_make_boundary():
    cells = np.zeros((5, 5), dtype=np.int8)
    cells[2, 2] = CellState.OCCUPIED
    assert extract_boundary(OccupancyGrid(cells)) == set()
    cells[0, 0] = CellState.FREE
    assert extract_boundary(OccupancyGrid(cells)) == set()
    cells[1, 1] = CellState.FREE
    assert extract_boundary(OccupancyGrid(cells)) == {(2, 2)}


def test_components_match_union_find():
    rng = np.random.default_rng(1)
    for _ in range(50):
        grid = random_grid(rng, (64, 64), p_occ=0.35)
        pixels = extract_boundary(grid)
        comps = connected_components(pixels)
        got = {frozenset(map(tuple, c.pixels.tolist())) for c in comps}
        assert got == union_find_components(pixels)


@given(st.integers(0, 10_000))
def test_walk_visits_each_pixel_once(seed):
    grid = random_grid(np.random.default_rng(seed), (20, 20), p_occ=0.4)
    mask = boundary_mask(grid)
    comps = connected_components(mask)
    total = sum(len(c) for c in comps)
    assert total == mask.sum()
    for c in comps:
        assert len({tuple(p) for p in c.pixels.tolist()}) == len(c)


def test_components_accept_iterables_and_order():
    comps = connected_components([(5, 5), (0, 0), (0, 1), (5, 6)])
    assert [c.pixels.tolist() for c in comps] == [[[0, 0], [0, 1]], [[5, 5], [5, 6]]]
    assert connected_components([]) == []
    with pytest.raises(ValueError):
        connected_components([(-1, 0)])


def test_closed_loop_detection():
    cells = np.full((20, 20), CellState.FREE, dtype=np.int8)
    cells[5:12, 5:12] = CellState.OCCUPIED
    (comp,) = connected_components(boundary_mask(OccupancyGrid(cells)))
    assert comp.closed and len(comp) == 24
    steps = np.abs(np.diff(comp.pixels, axis=0)).max(axis=1)
    assert (steps == 1).all()


def test_corner_response_matches_naive_loops():
    rng = np.random.default_rng(3)
    occ = rng.random((14, 17)) < 0.4
    assert np.allclose(corner_response(occ), naive_corner_response(occ), atol=1e-12)


# sides shorter than about two suppression radii merge neighbouring corners
@given(st.integers(9, 40), st.integers(9, 40), st.integers(4, 10), st.integers(4, 10))
def test_rectangle_outline_has_four_corners(h, w, r0, c0):
    cells = np.full((h + 2 * r0, w + 2 * c0), CellState.FREE, dtype=np.int8)
    cells[r0:r0 + h, c0:c0 + w] = CellState.OCCUPIED
    grid = OccupancyGrid(cells)
    cfg = PlannerConfig(sigma=2)
    (comp,) = connected_components(boundary_mask(grid))
    corners = detect_corners(comp, cfg, corner_response(grid.occupied, cfg))
    assert len(corners) == 4
    # one corner near each rectangle corner
    want = [(r0, c0), (r0, c0 + w - 1), (r0 + h - 1, c0), (r0 + h - 1, c0 + w - 1)]
    got = [tuple(comp.pixels[i]) for i in corners]
    for q in want:
        assert min(max(abs(q[0] - p[0]), abs(q[1] - p[1])) for p in got) <= 2


def test_room_seen_from_inside_has_four_corners():
    cells = np.full((40, 60), CellState.OCCUPIED, dtype=np.int8)
    cells[3:-3, 3:-3] = CellState.FREE
    grid = OccupancyGrid(cells)
    cfg = PlannerConfig()
    (comp,) = connected_components(boundary_mask(grid))
    assert len(detect_corners(comp, cfg, corner_response(grid.occupied, cfg))) == 4


@pytest.mark.parametrize("thick", [1, 3, 5])
@pytest.mark.parametrize("transpose", [False, True])
def test_straight_wall_has_no_corners(thick, transpose):
    cells = np.full((40, 70), CellState.FREE, dtype=np.int8)
    cells[:thick] = CellState.OCCUPIED
    if transpose:
        cells = np.ascontiguousarray(cells.T)
    grid = OccupancyGrid(cells)
    cfg = PlannerConfig()
    (comp,) = connected_components(boundary_mask(grid))
    assert detect_corners(comp, cfg, corner_response(grid.occupied, cfg)) == []


def test_sigma_filter_and_segments():
    cells = np.full((40, 60), CellState.FREE, dtype=np.int8)
    cells[5:15, 5:25] = CellState.OCCUPIED  # perimeter 56 pixels
    cells[30:33, 40:43] = CellState.OCCUPIED  # perimeter 8 pixels, filtered
    grid = OccupancyGrid(cells)
    segs = analyze(grid, PlannerConfig(sigma=25))
    assert len(segs) == 4
    assert sum(len(s) for s in segs) == 56
    assert {s.component_id for s in segs} == {0}
    for s in segs:
        # straight sides, give or take the pixel next to each corner
        line = max(np.unique(s.pixels[:, k], return_counts=True)[1].max() for k in (0, 1))
        assert line >= len(s) - 2
    assert analyze(grid, PlannerConfig(sigma=56)) == []


def test_segments_cut_at_walk_jumps():
    comp = BoundaryComponent(np.array([[0, i] for i in range(30)] + [[5, i] for i in range(30)]))
    segs = split_segments([comp], PlannerConfig(sigma=2), np.zeros((10, 40)))
    assert [len(s) for s in segs] == [30, 30]


def test_polyline_arc():
    assert polyline_arc(np.array([[0, 0], [0, 1], [1, 2]])).tolist() == pytest.approx([0, 1, 1 + 2 ** 0.5])
    assert polyline_arc(np.zeros((1, 2))).tolist() == [0.0]


def test_config_validation():
    with pytest.raises(ValueError):
        PlannerConfig(gamma=0)
    with pytest.raises(ValueError):
        PlannerConfig(sigma=1)
