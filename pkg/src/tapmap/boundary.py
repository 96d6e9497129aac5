"""Boundary pixels, boundary graph components, corners and segments.

A boundary pixel is an occupied cell with at least one free 8-neighbour.
Components of the 8-adjacency graph over those pixels are walked into
ordered polylines, filtered by length and cut at Shi-Tomasi corners.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np
from scipy import ndimage

from .gridmap import OccupancyGrid

# 8-neighbour offsets, counter-clockwise from east; index = direction code
OFFSETS = ((0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1))
_EIGHT = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class PlannerConfig:
    sigma: int = 25
    gamma: float = 1.0
    corner_box: int = 3
    corner_window: int = 5
    corner_quality: float = 0.04
    corner_nms_radius: float = 5.0

    def __post_init__(self):
        if self.sigma < 2:
            raise ValueError("sigma must be >= 2")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")


@dataclass
class BoundaryComponent:
    pixels: np.ndarray  # (n, 2) rows/cols in walk order
    closed: bool = False
    id: int = 0

    def __len__(self) -> int:
        return len(self.pixels)


@dataclass
class BoundarySegment:
    pixels: np.ndarray
    component_id: int = 0
    id: int = 0

    def __len__(self) -> int:
        return len(self.pixels)

    def arc_length(self, resolution: float) -> float:
        return float(polyline_arc(self.pixels)[-1] * resolution)


def polyline_arc(pixels: np.ndarray) -> np.ndarray:
    """Cumulative arc length (cell units) at each pixel of a polyline."""
    pixels = np.asarray(pixels, dtype=float)
    if len(pixels) < 2:
        return np.zeros(len(pixels))
    steps = np.hypot(*np.diff(pixels, axis=0).T)
    return np.concatenate([[0.0], np.cumsum(steps)])


def boundary_mask(grid: OccupancyGrid) -> np.ndarray:
    near_free = ndimage.binary_dilation(grid.free, structure=_EIGHT)
    return grid.occupied & near_free


def extract_boundary(grid: OccupancyGrid) -> set[tuple[int, int]]:
    """Occupied cells touching free space. Unknown neighbours do not count."""
    return {(int(r), int(c)) for r, c in np.argwhere(boundary_mask(grid))}


def _as_mask(pts) -> np.ndarray:
    if isinstance(pts, np.ndarray) and pts.dtype == bool:
        return pts
    pts = list(pts)
    if not pts:
        return np.zeros((1, 1), dtype=bool)
    arr = np.asarray(pts, dtype=int)
    if (arr < 0).any():
        raise ValueError("pixel coordinates must be non-negative")
    mask = np.zeros(tuple(arr.max(axis=0) + 1), dtype=bool)
    mask[arr[:, 0], arr[:, 1]] = True
    return mask


def _turn(a: int, b: int) -> int:
    d = abs(a - b) % 8
    return min(d, 8 - d)


def _walk(members: set[tuple[int, int]]) -> tuple[list[tuple[int, int]], bool]:
    """Depth-first walk of one component preferring the straightest move.

    Diagonal steps that would skip an unvisited orthogonal pixel are replaced
    by that pixel, so staircases are traversed in full instead of leaving a
    parallel strand for the way back.
    """
    def degree(p):
        return sum((p[0] + dr, p[1] + dc) in members for dr, dc in OFFSETS)

    ends = sorted(p for p in members if degree(p) == 1)
    start = ends[0] if ends else min(members)
    order = [start]
    visited = {start}
    heading = {start: None}
    stack = [start]
    while stack:
        p = stack[-1]
        options = []
        for k, (dr, dc) in enumerate(OFFSETS):
            q = (p[0] + dr, p[1] + dc)
            if q not in members or q in visited:
                continue
            if dr and dc:
                side = [(p[0] + dr, p[1]), (p[0], p[1] + dc)]
                if any(s in members and s not in visited for s in side):
                    continue
            prev = heading[p]
            options.append((0 if prev is None else _turn(prev, k), k, q))
        if not options:
            stack.pop()
            continue
        _, k, q = min(options)
        visited.add(q)
        heading[q] = k
        order.append(q)
        stack.append(q)

    closed = (not ends and len(order) >= 3
              and max(abs(order[0][0] - order[-1][0]), abs(order[0][1] - order[-1][1])) == 1)
    return order, closed


def connected_components(pts) -> list[BoundaryComponent]:
    """Partition boundary pixels into 8-connected components.

    ``pts`` is a boolean mask or an iterable of ``(row, col)``. Components are
    returned sorted by their smallest pixel, each as an ordered walk.
    """
    mask = _as_mask(pts)
    labels, n = ndimage.label(mask, structure=_EIGHT)
    if n == 0:
        return []
    groups: dict[int, set] = {}
    for r, c in np.argwhere(labels):
        groups.setdefault(int(labels[r, c]), set()).add((int(r), int(c)))
    comps = []
    for members in sorted(groups.values(), key=min):
        order, closed = _walk(members)
        comps.append(BoundaryComponent(np.array(order, dtype=int), closed))
    for i, comp in enumerate(comps):
        comp.id = i
    return comps


def corner_response(occupied: np.ndarray, cfg: PlannerConfig = PlannerConfig()) -> np.ndarray:
    """Shi-Tomasi minimum-eigenvalue map of the binary occupied image.

    Filters replicate the edge so the map border does not read as a corner.
    """
    img = ndimage.uniform_filter(occupied.astype(float), cfg.corner_box, mode="nearest")
    gx = ndimage.sobel(img, axis=1, mode="nearest")
    gy = ndimage.sobel(img, axis=0, mode="nearest")
    w = cfg.corner_window
    sxx = ndimage.uniform_filter(gx * gx, w, mode="nearest")
    syy = ndimage.uniform_filter(gy * gy, w, mode="nearest")
    sxy = ndimage.uniform_filter(gx * gy, w, mode="nearest")
    half_trace = 0.5 * (sxx + syy)
    root = np.sqrt((0.5 * (sxx - syy)) ** 2 + sxy ** 2)
    return np.maximum(half_trace - root, 0.0)


def detect_corners(component: BoundaryComponent, cfg: PlannerConfig,
                   response: np.ndarray) -> list[int]:
    """Indices into ``component.pixels`` that are corners.

    A pixel is a corner when its response exceeds ``corner_quality`` times
    the component maximum and beats every other component pixel within
    ``corner_nms_radius`` (ties go to the lower index). Endpoints of open
    components never count: cutting there would not split anything.
    """
    px = component.pixels
    n = len(px)
    if n < 3:
        return []
    resp = response[px[:, 0], px[:, 1]]
    peak = resp.max()
    if peak <= 1e-12:
        return []
    thr = cfg.corner_quality * peak
    rad = int(np.floor(cfg.corner_nms_radius))
    lo = px.min(axis=0) - rad
    index_img = np.full(tuple(px.max(axis=0) - lo + rad + 1), -1, dtype=int)
    local = px - lo
    index_img[local[:, 0], local[:, 1]] = np.arange(n)
    is_max = np.ones(n, dtype=bool)
    for dr in range(-rad, rad + 1):
        for dc in range(-rad, rad + 1):
            if (dr, dc) == (0, 0) or dr * dr + dc * dc > cfg.corner_nms_radius ** 2:
                continue
            j = index_img[local[:, 0] + dr, local[:, 1] + dc]
            has = j >= 0
            jj = np.where(has, j, 0)
            loses = (resp[jj] > resp) | ((resp[jj] == resp) & (jj < np.arange(n)))
            is_max &= ~(has & loses)
    corners = np.flatnonzero(is_max & (resp > thr))
    if not component.closed:
        corners = corners[(corners > 0) & (corners < n - 1)]
    return [int(i) for i in corners]


def _adjacent(a, b) -> bool:
    return max(abs(int(a[0]) - int(b[0])), abs(int(a[1]) - int(b[1]))) <= 1


def _cut(pixels: np.ndarray, corners: Iterable[int]) -> list[np.ndarray]:
    """Cut after each corner index and wherever the walk jumped."""
    cuts = set(i + 1 for i in corners)
    cuts.update(i for i in range(1, len(pixels)) if not _adjacent(pixels[i - 1], pixels[i]))
    bounds = [0] + sorted(c for c in cuts if 0 < c < len(pixels)) + [len(pixels)]
    return [pixels[a:b] for a, b in zip(bounds[:-1], bounds[1:])]


def split_segments(components: list[BoundaryComponent], cfg: PlannerConfig,
                   response: np.ndarray) -> list[BoundarySegment]:
    """Drop components of length <= sigma, cut the rest at their corners.

    The corner pixel ends the preceding segment. Closed loops are rotated to
    start right after their first corner so no segment straddles the seam.
    """
    segments: list[BoundarySegment] = []
    for comp in components:
        if len(comp) <= cfg.sigma:
            continue
        corners = detect_corners(comp, cfg, response)
        pixels = comp.pixels
        if comp.closed and corners:
            shift = corners[0] + 1
            pixels = np.roll(pixels, -shift, axis=0)
            corners = [(c - shift) % len(pixels) for c in corners]
        for piece in _cut(pixels, corners):
            segments.append(BoundarySegment(piece, comp.id, len(segments)))
    return segments


def analyze(grid: OccupancyGrid, cfg: PlannerConfig) -> list[BoundarySegment]:
    """Boundary pixels -> components -> sigma filter -> corner split."""
    comps = connected_components(boundary_mask(grid))
    return split_segments(comps, cfg, corner_response(grid.occupied, cfg))
