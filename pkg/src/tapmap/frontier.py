"""Frontier detection and goal selection."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .gridmap import OccupancyGrid, Pose

_EIGHT = np.ones((3, 3), dtype=bool)


@dataclass
class FrontierCluster:
    cells: np.ndarray  # (n, 2) row/col
    centroid: tuple[float, float]  # world metres

    @property
    def size(self) -> int:
        return len(self.cells)


def frontier_mask(grid: OccupancyGrid) -> np.ndarray:
    """Free cells with at least one unknown 8-neighbour."""
    return grid.free & ndimage.binary_dilation(grid.unknown_mask, structure=_EIGHT)


def find_frontiers(grid: OccupancyGrid, min_size: int = 5, pose: Pose | None = None,
                   exclude: np.ndarray | None = None) -> list[FrontierCluster]:
    """8-connected frontier clusters of at least ``min_size`` cells.

    Sorted by centroid distance to ``pose`` (ties: smaller first cell index).
    Cells flagged in ``exclude`` are ignored.
    """
    mask = frontier_mask(grid)
    if exclude is not None:
        mask &= ~exclude
    labels, n = ndimage.label(mask, structure=_EIGHT)
    clusters = []
    for sl_idx, sl in enumerate(ndimage.find_objects(labels), start=1):
        if sl is None:
            continue
        rr, cc = np.nonzero(labels[sl] == sl_idx)
        if len(rr) < min_size:
            continue
        cells = np.column_stack([rr + sl[0].start, cc + sl[1].start])
        mr, mc = cells.mean(axis=0)
        centroid = (grid.origin[0] + (mc + 0.5) * grid.resolution,
                    grid.origin[1] + (mr + 0.5) * grid.resolution)
        clusters.append(FrontierCluster(cells, centroid))
    if pose is not None:
        def key(cl):
            first = int(cl.cells[0, 0]) * grid.width + int(cl.cells[0, 1])
            return (math.hypot(cl.centroid[0] - pose.x, cl.centroid[1] - pose.y), first)
        clusters.sort(key=key)
    return clusters


def traversable(grid: OccupancyGrid, robot_radius: float) -> np.ndarray:
    """Known-free cells whose centre is at least ``robot_radius`` from any obstacle."""
    if not grid.occupied.any():
        return grid.free.copy()
    clearance = ndimage.distance_transform_edt(~grid.occupied) * grid.resolution
    return grid.free & (clearance >= robot_radius)


def reachable_region(grid: OccupancyGrid, pose: Pose, robot_radius: float) -> np.ndarray:
    """Traversable cells 8-connected to the robot's cell."""
    ok = traversable(grid, robot_radius)
    r, c = grid.world_to_cell(pose.x, pose.y)
    if not grid.in_bounds(r, c):
        return np.zeros(grid.shape, dtype=bool)
    ok[r, c] = grid.free[r, c] or ok[r, c]
    labels, _ = ndimage.label(ok, structure=_EIGHT)
    if labels[r, c] == 0:
        return np.zeros(grid.shape, dtype=bool)
    return labels == labels[r, c]


def select_goal(clusters: list[FrontierCluster], pose: Pose, grid: OccupancyGrid,
                robot_radius: float = 0.2, reach: float | None = None,
                region: np.ndarray | None = None) -> Pose | None:
    """Navigation goal for the first reachable cluster, or ``None``."""
    chosen = choose_frontier(clusters, pose, grid, robot_radius, reach, region)
    return None if chosen is None else chosen[0]


def choose_frontier(clusters: list[FrontierCluster], pose: Pose, grid: OccupancyGrid,
                    robot_radius: float = 0.2, reach: float | None = None,
                    region: np.ndarray | None = None) -> tuple[Pose, FrontierCluster] | None:
    """Like :func:`select_goal` but also returns the chosen cluster.

    A cluster is reachable when some cell of the robot's reachable region lies
    within ``reach`` (default ``robot_radius`` + 2 cells) of one of its
    cells; the goal is the such cell closest to the cluster centroid.
    """
    if not clusters:
        return None
    if region is None:
        region = reachable_region(grid, pose, robot_radius)
    if not region.any():
        return None
    if reach is None:
        reach = robot_radius + 2 * grid.resolution
    res = grid.resolution
    for cl in clusters:
        lo = np.maximum(cl.cells.min(axis=0) - int(math.ceil(reach / res)) - 1, 0)
        hi = np.minimum(cl.cells.max(axis=0) + int(math.ceil(reach / res)) + 2, grid.shape)
        box = np.ones(tuple(hi - lo), dtype=bool)
        local = cl.cells - lo
        box[local[:, 0], local[:, 1]] = False
        near = ndimage.distance_transform_edt(box) * res <= reach
        cand = near & region[lo[0]:hi[0], lo[1]:hi[1]]
        if not cand.any():
            continue
        rr, cc = np.nonzero(cand)
        xs = grid.origin[0] + (cc + lo[1] + 0.5) * res
        ys = grid.origin[1] + (rr + lo[0] + 0.5) * res
        k = int(np.argmin(np.hypot(xs - cl.centroid[0], ys - cl.centroid[1])))
        heading = math.atan2(cl.centroid[1] - ys[k], cl.centroid[0] - xs[k])
        return Pose(float(xs[k]), float(ys[k]), heading), cl
    return None
