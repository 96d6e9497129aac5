"""Tap placement along boundary segments, approach normals and visit order."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .boundary import BoundarySegment, PlannerConfig, polyline_arc
from .gridmap import CellState, OccupancyGrid, Pose

TANGENT_WINDOW = 7


class AmbiguousNormal(ValueError):
    """Free space on both sides of the surface: no unique approach side."""


@dataclass(frozen=True)
class TapPoint:
    position: tuple[float, float]
    pixel: tuple[int, int]
    segment_id: int = 0
    index: int = 0  # pixel index within the segment polyline
    arc_offset: float = 0.0  # metres from segment start
    approach: tuple[float, float] | None = None
    order: int = -1


@dataclass
class TapLedger:
    """Every tap executed so far, with the segment it was planned on."""

    resolution: float = 0.05
    positions: list[tuple[float, float]] = field(default_factory=list)
    lineage: list[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.positions)

    def add(self, tap: TapPoint) -> bool:
        if self.positions:
            d = np.hypot(*(np.asarray(self.positions) - tap.position).T)
            if d.min() < self.resolution:
                return False
        self.positions.append(tuple(tap.position))
        self.lineage.append(tap.segment_id)
        return True


def tap_offsets(length: float, gamma: float) -> list[float]:
    """Arc-length offsets of taps on a segment of ``length`` metres.

    Short segments (<= 1.5 gamma) get their midpoint; longer ones a comb of
    floor(length / gamma) taps spaced gamma apart, centred on the segment.
    """
    if length <= 1.5 * gamma:
        return [length / 2.0]
    n = int(math.floor(length / gamma + 1e-9))
    first = (length - (n - 1) * gamma) / 2.0
    return [first + k * gamma for k in range(n)]


def place_taps(segment: BoundarySegment, cfg: PlannerConfig, resolution: float,
               grid: OccupancyGrid | None = None) -> list[TapPoint]:
    """Tap points for one segment, snapped to the nearest polyline pixel.

    With ``grid`` given, positions are reported in that grid's world frame;
    otherwise the origin is taken as (0, 0).
    """
    if len(segment) < 2:
        return []
    arc = polyline_arc(segment.pixels) * resolution
    origin = grid.origin if grid is not None else (0.0, 0.0)
    taps = []
    for s in tap_offsets(float(arc[-1]), cfg.gamma):
        i = int(np.argmin(np.abs(arc - s)))
        r, c = (int(v) for v in segment.pixels[i])
        pos = (origin[0] + (c + 0.5) * resolution, origin[1] + (r + 0.5) * resolution)
        taps.append(TapPoint(pos, (r, c), segment.id, i, s))
    return taps


def tap_orientation(segment: BoundarySegment, tap: TapPoint,
                    grid: OccupancyGrid) -> tuple[float, float]:
    """Unit approach direction at ``tap``, pointing from free space into the surface.

    The tangent is the principal axis of the nearest seven polyline pixels.
    Raises :class:`AmbiguousNormal` when free cells lie on both sides.
    """
    px = segment.pixels
    n = len(px)
    lo = max(0, min(tap.index - TANGENT_WINDOW // 2, n - TANGENT_WINDOW))
    pts = px[lo:lo + TANGENT_WINDOW][:, ::-1].astype(float)  # (x=col, y=row)
    pts -= pts.mean(axis=0)
    if len(pts) < 2 or not pts.any():
        raise AmbiguousNormal("segment too short for a tangent")
    _, vecs = np.linalg.eigh(pts.T @ pts)
    tx, ty = vecs[:, -1]
    normal = np.array([-ty, tx])

    r0, c0 = tap.pixel
    free = grid.cells == CellState.FREE
    h, w = grid.shape
    pull = np.zeros(2)
    for dr in range(-2, 3):
        for dc in range(-2, 3):
            r, c = r0 + dr, c0 + dc
            if 0 <= r < h and 0 <= c < w and free[r, c]:
                pull += (dc, dr)
    side = float(normal @ pull)
    if abs(side) < 1e-9:
        raise AmbiguousNormal(f"no free side at cell {tap.pixel}")
    if side > 0:
        normal = -normal
    for k in (1, 2):
        r = r0 + int(round(k * normal[1]))
        c = c0 + int(round(k * normal[0]))
        if 0 <= r < h and 0 <= c < w and free[r, c]:
            raise AmbiguousNormal(f"free space on both sides of cell {tap.pixel}")
    normal /= np.linalg.norm(normal)
    return float(normal[0]), float(normal[1])


def dedup_taps(candidates: list[TapPoint], ledger: TapLedger,
               cfg: PlannerConfig) -> list[TapPoint]:
    """Drop candidates closer than gamma/2 to an already executed tap."""
    if not ledger.positions:
        return list(candidates)
    done = np.asarray(ledger.positions)
    keep = []
    for tap in candidates:
        d = np.hypot(*(done - tap.position).T)
        if d.min() >= cfg.gamma / 2.0:
            keep.append(tap)
    return keep


def _path_length(dist: np.ndarray, path: list[int]) -> float:
    return float(sum(dist[a, b] for a, b in zip(path[:-1], path[1:])))


def _nearest_neighbour(dist: np.ndarray, first: int | None = None) -> list[int]:
    path = [0]
    left = set(range(1, len(dist)))
    if first is not None:
        path.append(first)
        left.remove(first)
    while left:
        here = path[-1]
        nxt = min(left, key=lambda j: (dist[here, j], j))
        path.append(nxt)
        left.remove(nxt)
    return path


def _two_opt(dist: np.ndarray, path: list[int]) -> list[int]:
    """2-opt for an open path whose first node is pinned."""
    path = list(path)
    n = len(path)
    improved = True
    while improved:
        improved = False
        for i in range(1, n - 1):
            for j in range(i + 1, n):
                a, b, c = path[i - 1], path[i], path[j]
                delta = dist[a, c] - dist[a, b]
                if j + 1 < n:
                    d = path[j + 1]
                    delta += dist[b, d] - dist[c, d]
                if delta < -1e-12:
                    path[i:j + 1] = path[i:j + 1][::-1]
                    improved = True
    return path


def _or_opt(dist: np.ndarray, path: list[int]) -> tuple[list[int], bool]:
    """Relocate runs of 1-3 nodes (either orientation); first improving move wins."""
    n = len(path)
    for size in (1, 2, 3):
        for i in range(1, n - size + 1):
            run = path[i:i + size]
            prev = path[i - 1]
            nxt = path[i + size] if i + size < n else None
            removed = dist[prev, run[0]]
            if nxt is not None:
                removed += dist[run[-1], nxt] - dist[prev, nxt]
            rest = path[:i] + path[i + size:]
            for k in range(1, len(rest) + 1):
                if k == i:
                    continue
                u = rest[k - 1]
                v = rest[k] if k < len(rest) else None
                for piece in (run, run[::-1]):
                    added = dist[u, piece[0]]
                    if v is not None:
                        added += dist[piece[-1], v] - dist[u, v]
                    if added - removed < -1e-12:
                        return rest[:k] + piece + rest[k:], True
    return path, False


def _improve(dist: np.ndarray, path: list[int]) -> list[int]:
    path = _two_opt(dist, path)
    moved = len(path) > 3
    while moved:
        path, moved = _or_opt(dist, path)
        if moved:
            path = _two_opt(dist, path)
    return path


def order_taps(taps: list[TapPoint], start: Pose, restarts: int = 8) -> list[TapPoint]:
    """Open-path TSP from ``start``.

    Nearest-neighbour construction, then 2-opt and or-opt alternated until
    neither improves. The construction is repeated with each of the
    ``restarts`` taps closest to the start forced first; the shortest local
    optimum wins.
    """
    if not taps:
        return []
    pts = np.array([(start.x, start.y)] + [t.position for t in taps])
    dist = np.hypot(*(pts[:, None, :] - pts[None, :, :]).transpose(2, 0, 1))
    firsts = sorted(range(1, len(pts)), key=lambda j: (dist[0, j], j))[:max(1, restarts)]
    best, best_len = None, math.inf
    for first in firsts:
        path = _improve(dist, _nearest_neighbour(dist, first))
        length = _path_length(dist, path)
        if length < best_len - 1e-12:
            best, best_len = path, length
    return [replace(taps[j - 1], order=k) for k, j in enumerate(best[1:])]


def tour_length(taps: list[TapPoint], start: Pose) -> float:
    pts = [(start.x, start.y)] + [t.position for t in taps]
    return float(sum(math.dist(a, b) for a, b in zip(pts[:-1], pts[1:])))
