"""Occupancy grids, ground-truth worlds and simulated 2D lidar.

Cells are indexed ``(row, col)``. Row index grows with world ``y`` and column
index with world ``x``; the centre of cell ``(r, c)`` sits at
``origin + ((c + 0.5) * res, (r + 0.5) * res)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterator, NamedTuple

import numpy as np


class CellState(IntEnum):
    UNKNOWN = 0
    FREE = 1
    OCCUPIED = 2


class Material(IntEnum):
    """Classifier label set: seven surface materials plus the empty tap."""

    METAL = 0
    WOOD = 1
    CARDBOARD = 2
    PLASTIC = 3
    CONCRETE = 4
    GLASS = 5
    WALL = 6
    EMPTY = 7


MATERIALS = tuple(m for m in Material if m is not Material.EMPTY)
N_CLASSES = len(Material)


class InvalidPose(ValueError):
    pass


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    heading: float = 0.0


class Ray(NamedTuple):
    angle: float
    distance: float
    hit: bool


@dataclass
class OccupancyGrid:
    cells: np.ndarray
    resolution: float = 0.05
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")
        self.cells = np.asarray(self.cells, dtype=np.int8)
        if self.cells.ndim != 2:
            raise ValueError("cells must be a 2D raster")

    @classmethod
    def unknown(cls, shape, resolution=0.05, origin=(0.0, 0.0)) -> "OccupancyGrid":
        return cls(np.zeros(shape, dtype=np.int8), resolution, origin)

    @property
    def shape(self) -> tuple[int, int]:
        return self.cells.shape

    @property
    def height(self) -> int:
        return self.cells.shape[0]

    @property
    def width(self) -> int:
        return self.cells.shape[1]

    @property
    def free(self) -> np.ndarray:
        return self.cells == CellState.FREE

    @property
    def occupied(self) -> np.ndarray:
        return self.cells == CellState.OCCUPIED

    @property
    def unknown_mask(self) -> np.ndarray:
        return self.cells == CellState.UNKNOWN

    def known_count(self) -> int:
        return int(np.count_nonzero(self.cells != CellState.UNKNOWN))

    def copy(self) -> "OccupancyGrid":
        return OccupancyGrid(self.cells.copy(), self.resolution, self.origin)

    def world_to_cell(self, x: float, y: float) -> tuple[int, int]:
        col = math.floor((x - self.origin[0]) / self.resolution)
        row = math.floor((y - self.origin[1]) / self.resolution)
        return row, col

    def cell_to_world(self, row: int, col: int) -> tuple[float, float]:
        return (self.origin[0] + (col + 0.5) * self.resolution,
                self.origin[1] + (row + 0.5) * self.resolution)

    def in_bounds(self, row: int, col: int) -> bool:
        return 0 <= row < self.height and 0 <= col < self.width

    def same_frame(self, other: "OccupancyGrid") -> bool:
        return (self.shape == other.shape and self.resolution == other.resolution
                and tuple(self.origin) == tuple(other.origin))


@dataclass
class GroundTruthWorld:
    """Static world. ``materials`` holds a :class:`Material` value per
    occupied cell and -1 for free cells."""

    materials: np.ndarray
    resolution: float = 0.05
    origin: tuple[float, float] = (0.0, 0.0)
    name: str = field(default="world")

    def __post_init__(self):
        self.materials = np.asarray(self.materials, dtype=np.int8)
        bad = (self.materials < -1) | (self.materials >= Material.EMPTY)
        if bad.any():
            r, c = np.argwhere(bad)[0]
            raise ValueError(f"illegal material code at cell ({r}, {c})")

    @property
    def shape(self) -> tuple[int, int]:
        return self.materials.shape

    @property
    def occupied(self) -> np.ndarray:
        return self.materials >= 0

    def material_at(self, row: int, col: int) -> Material | None:
        v = int(self.materials[row, col])
        return None if v < 0 else Material(v)

    def blank_grid(self) -> OccupancyGrid:
        return OccupancyGrid.unknown(self.shape, self.resolution, self.origin)

    def truth_grid(self) -> OccupancyGrid:
        """Fully known occupancy grid of the world."""
        cells = np.where(self.occupied, CellState.OCCUPIED, CellState.FREE)
        return OccupancyGrid(cells.astype(np.int8), self.resolution, self.origin)


def _traverse(gx: float, gy: float, angle: float, max_t: float,
              shape: tuple[int, int]) -> Iterator[tuple[int, int, float]]:
    """Integer DDA (Amanatides-Woo) over grid cells.

    ``gx, gy`` are continuous grid coordinates (cell units). Yields
    ``(row, col, t_enter)`` for each cell crossed, ``t`` in cell units.
    """
    h, w = shape
    dx, dy = math.cos(angle), math.sin(angle)
    col, row = math.floor(gx), math.floor(gy)
    if dx > 0:
        step_c, t_c, dt_c = 1, (col + 1 - gx) / dx, 1.0 / dx
    elif dx < 0:
        step_c, t_c, dt_c = -1, (gx - col) / -dx, -1.0 / dx
    else:
        step_c, t_c, dt_c = 0, math.inf, math.inf
    if dy > 0:
        step_r, t_r, dt_r = 1, (row + 1 - gy) / dy, 1.0 / dy
    elif dy < 0:
        step_r, t_r, dt_r = -1, (gy - row) / -dy, -1.0 / dy
    else:
        step_r, t_r, dt_r = 0, math.inf, math.inf
    t = 0.0
    while 0 <= row < h and 0 <= col < w and t <= max_t:
        yield row, col, t
        # exact corner crossings step diagonally so no two cells share an entry t
        if t_c < t_r:
            col += step_c
            t = t_c
            t_c += dt_c
        elif t_r < t_c:
            row += step_r
            t = t_r
            t_r += dt_r
        else:
            col += step_c
            row += step_r
            t = t_c
            t_c += dt_c
            t_r += dt_r


def _grid_coords(pose: Pose, resolution: float, origin) -> tuple[float, float]:
    return (pose.x - origin[0]) / resolution, (pose.y - origin[1]) / resolution


def raycast_scan(world: GroundTruthWorld, pose: Pose, max_range: float = 4.0,
                 n_rays: int = 720) -> list[Ray]:
    """Simulated planar lidar sweep.

    Each ray reports the distance at which it enters the first occupied cell,
    or ``max_range`` with ``hit=False`` when nothing is within range.
    """
    if n_rays < 1 or max_range <= 0:
        raise ValueError("need n_rays >= 1 and max_range > 0")
    res = world.resolution
    gx, gy = _grid_coords(pose, res, world.origin)
    row, col = math.floor(gy), math.floor(gx)
    h, w = world.shape
    if not (0 <= row < h and 0 <= col < w):
        raise InvalidPose(f"pose ({pose.x:.3f}, {pose.y:.3f}) is outside the grid")
    occ = world.occupied.tolist()
    if occ[row][col]:
        raise InvalidPose(f"pose ({pose.x:.3f}, {pose.y:.3f}) is inside an obstacle")

    max_t = max_range / res
    rays = []
    for k in range(n_rays):
        angle = pose.heading + 2.0 * math.pi * k / n_rays
        result = Ray(angle, max_range, False)
        for r, c, t in _traverse(gx, gy, angle, max_t, world.shape):
            if occ[r][c]:
                result = Ray(angle, t * res, True)
                break
        rays.append(result)
    return rays


def integrate_scan(grid: OccupancyGrid, pose: Pose, scan: list[Ray]) -> OccupancyGrid:
    """Return a new grid with ``scan`` fused in.

    Traversed cells become free, hit cells occupied. Occupied never reverts.
    """
    res = grid.resolution
    gx, gy = _grid_coords(pose, res, grid.origin)
    free_cells: list[tuple[int, int]] = []
    hit_cells: list[tuple[int, int]] = []
    for ray in scan:
        limit = ray.distance / res
        tol = 1e-11 * max(1.0, limit)  # only undoes the metres round trip
        steps = []
        for r, c, t in _traverse(gx, gy, ray.angle, limit + tol, grid.shape):
            if t > limit + tol:
                break
            steps.append((r, c, t))
        if ray.hit and steps:
            # near a corner several cells start within tol of the reported
            # distance; the one closest to it is the cell the cast stopped in
            k = min(range(len(steps)), key=lambda i: (abs(steps[i][2] - limit), -i))
            if abs(steps[k][2] - limit) <= tol:
                hit_cells.append(steps[k][:2])
                steps = steps[:k]
        free_cells += [(r, c) for r, c, t in steps if t < limit]

    out = grid.copy()
    cells = out.cells
    if free_cells:
        rr, cc = np.array(free_cells).T
        keep = cells[rr, cc] != CellState.OCCUPIED
        cells[rr[keep], cc[keep]] = CellState.FREE
    if hit_cells:
        rr, cc = np.array(hit_cells).T
        cells[rr, cc] = CellState.OCCUPIED
    return out


def diff_map(grid: OccupancyGrid, previous: OccupancyGrid | None) -> OccupancyGrid:
    """Keep only what ``grid`` knows that ``previous`` did not."""
    if previous is None:
        return grid.copy()
    if not grid.same_frame(previous):
        raise ValueError("diff_map needs grids with identical shape, resolution and origin")
    cells = np.where(previous.cells == CellState.UNKNOWN, grid.cells, CellState.UNKNOWN)
    return OccupancyGrid(cells.astype(np.int8), grid.resolution, grid.origin)
