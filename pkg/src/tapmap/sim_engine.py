"""Mission loop: scan, find boundaries, tap, classify, move to the next frontier.

Simulated time is declared rather than measured: path length over a fixed
speed plus a fixed cost per tap.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import acoustics
from .boundary import BoundarySegment, PlannerConfig, analyze, polyline_arc
from .classifier import CnnModel, forward
from .frontier import choose_frontier, find_frontiers, reachable_region, traversable
from .gridmap import (CellState, GroundTruthWorld, InvalidPose, Material, OccupancyGrid, Pose,
                      diff_map, integrate_scan, raycast_scan)
from .mfcc import compute_mfcc
from .tap_planner import (AmbiguousNormal, TapLedger, TapPoint, dedup_taps, order_taps,
                          place_taps, tap_orientation)

SQRT2 = math.sqrt(2.0)


class PlannerBug(RuntimeError):
    pass


class MissionError(RuntimeError):
    pass


@dataclass(frozen=True)
class FailureModel:
    p_fail: float = 0.05
    max_heading_error_deg: float = 15.0


@dataclass
class MissionConfig:
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    start: Pose = Pose(0.5, 0.5, 0.0)
    robot_radius: float = 0.2
    standoff_margin: float = 0.1
    speed: float = 0.5  # m/s
    tap_cost: float = 8.0  # s per tap
    max_range: float = 4.0
    n_rays: int = 1440
    failure: FailureModel = field(default_factory=FailureModel)
    snr_db: float = 10.0
    frontier_min_size: int = 5
    tap_budget: int | None = None
    acoustic_model: acoustics.MaterialAcousticModel | None = None


@dataclass
class NavPath:
    cells: list[tuple[int, int]]
    length: float  # metres


@dataclass
class TapObservation:
    clip: acoustics.AudioClip
    synthesized: Material  # what the microphones actually heard
    truth: Material  # material of the tapped cell
    failed: bool


@dataclass
class Marker:
    position: tuple[float, float]
    classified: Material
    truth: Material
    confidence: float


@dataclass
class MaterialMap:
    markers: list[Marker] = field(default_factory=list)


@dataclass
class RunMetrics:
    gamma: float
    per_material: dict[Material, list[int]] = field(
        default_factory=lambda: {m: [0, 0] for m in Material if m is not Material.EMPTY})
    total_taps: int = 0
    empty_taps: int = 0
    failed_taps: int = 0
    sim_time: float = 0.0
    path_length: float = 0.0
    iterations: int = 0
    unreachable: list[tuple[float, float]] = field(default_factory=list)

    @property
    def correct(self) -> int:
        return sum(c for c, _ in self.per_material.values())

    @property
    def attempted(self) -> int:
        return sum(a for _, a in self.per_material.values())

    @property
    def accuracy(self) -> float:
        return self.correct / self.attempted if self.attempted else float("nan")


class MissionResult(tuple):
    """``(material_map, metrics, grid)`` with attribute access."""

    def __new__(cls, material_map: MaterialMap, metrics: RunMetrics, grid: OccupancyGrid):
        return super().__new__(cls, (material_map, metrics, grid))

    material_map = property(lambda self: self[0])
    metrics = property(lambda self: self[1])
    grid = property(lambda self: self[2])


class OracleClassifier:
    """Reports exactly what was heard; for testing the planner in isolation."""

    def classify(self, obs: TapObservation) -> tuple[Material, float]:
        return obs.synthesized, 1.0


class CnnClassifier:
    def __init__(self, model: CnnModel):
        self.model = model

    def classify(self, obs: TapObservation) -> tuple[Material, float]:
        pred = forward(self.model, compute_mfcc(obs.clip))
        return pred.label, pred.confidence


def navigate(grid: OccupancyGrid, start: Pose, goal: Pose,
             robot_radius: float = 0.2) -> NavPath | None:
    """8-connected A* over known free space inflated by ``robot_radius``.

    Diagonal moves may not cut past a blocked orthogonal neighbour. The start
    cell is always enterable; ``None`` means unreachable.
    """
    ok = traversable(grid, robot_radius)
    s = grid.world_to_cell(start.x, start.y)
    g = grid.world_to_cell(goal.x, goal.y)
    if not grid.in_bounds(*s):
        raise InvalidPose("start outside the grid")
    if not grid.in_bounds(*g) or not ok[g]:
        return None
    ok[s] = True
    h, w = grid.shape
    res = grid.resolution

    def heuristic(c):
        dr, dc = abs(c[0] - g[0]), abs(c[1] - g[1])
        return (max(dr, dc) + (SQRT2 - 1) * min(dr, dc)) * res

    okl = ok.tolist()
    best = {s: 0.0}
    parent = {s: None}
    heap = [(heuristic(s), 0.0, s)]
    steps = [(dr, dc, res * (SQRT2 if dr and dc else 1.0))
             for dr in (-1, 0, 1) for dc in (-1, 0, 1) if dr or dc]
    while heap:
        f, cost, cell = heapq.heappop(heap)
        if cost > best[cell]:
            continue
        if cell == g:
            path = []
            while cell is not None:
                path.append(cell)
                cell = parent[cell]
            return NavPath(path[::-1], cost)
        r, c = cell
        for dr, dc, step in steps:
            nr, nc = r + dr, c + dc
            if not (0 <= nr < h and 0 <= nc < w) or not okl[nr][nc]:
                continue
            if dr and dc and not (okl[r + dr][c] and okl[r][c + dc]):
                continue
            nxt = (nr, nc)
            ncost = cost + step
            if ncost < best.get(nxt, math.inf) - 1e-12:
                best[nxt] = ncost
                parent[nxt] = cell
                heapq.heappush(heap, (ncost + heuristic(nxt), ncost, nxt))
    return None


def _angle_diff(a: float, b: float) -> float:
    return abs((a - b + math.pi) % (2 * math.pi) - math.pi)


def execute_tap(world: GroundTruthWorld, tap: TapPoint, pose: Pose,
                failure: FailureModel = FailureModel(), rng: np.random.Generator | None = None,
                audio_seed=0, snr_db: float = 10.0,
                acoustic_model: acoustics.MaterialAcousticModel | None = None) -> TapObservation:
    """Strike the surface at ``tap`` from ``pose`` and record it.

    A random failure (``p_fail``) or a heading more than the tolerance away
    from the approach direction produces an empty tap.
    """
    r, c = math.floor((tap.position[1] - world.origin[1]) / world.resolution), \
        math.floor((tap.position[0] - world.origin[0]) / world.resolution)
    if not (0 <= r < world.shape[0] and 0 <= c < world.shape[1]) or world.material_at(r, c) is None:
        raise PlannerBug(f"tap at {tap.position} does not touch an occupied cell")
    truth = world.material_at(r, c)
    rng = rng if rng is not None else np.random.default_rng(0)
    unlucky = rng.random() < failure.p_fail
    misaligned = False
    if tap.approach is not None:
        want = math.atan2(tap.approach[1], tap.approach[0])
        misaligned = _angle_diff(pose.heading, want) > math.radians(failure.max_heading_error_deg)
    failed = unlucky or misaligned
    heard = Material.EMPTY if failed else truth
    clip = acoustics.record_tap(heard, audio_seed, snr_db, acoustic_model)
    return TapObservation(clip, heard, truth, failed)


def standoff_pose(tap: TapPoint, cfg: MissionConfig) -> Pose:
    ux, uy = tap.approach
    d = cfg.robot_radius + cfg.standoff_margin
    return Pose(tap.position[0] - ux * d, tap.position[1] - uy * d, math.atan2(uy, ux))


def _resolve_tap(tap: TapPoint, seg: BoundarySegment, grid: OccupancyGrid,
                 region: np.ndarray, cfg: MissionConfig) -> tuple[TapPoint | None, bool]:
    """Give ``tap`` an approach direction and a reachable standoff.

    If the planned pixel cannot be approached, slide along the segment (at
    most gamma/2 of arc, nearest first). Returns the tap (or None) and whether
    every tried pixel had an ambiguous normal.
    """
    res = grid.resolution
    arc = polyline_arc(seg.pixels) * res
    here = arc[tap.index]
    near = np.flatnonzero(np.abs(arc - here) <= cfg.planner.gamma / 2 + 1e-9)
    near = sorted(near, key=lambda i: (abs(arc[i] - here), i))
    all_ambiguous = True
    for i in near:
        r, c = (int(v) for v in seg.pixels[i])
        cand = replace(tap, pixel=(r, c), index=int(i), arc_offset=float(arc[i]),
                       position=grid.cell_to_world(r, c))
        try:
            approach = tap_orientation(seg, cand, grid)
        except AmbiguousNormal:
            continue
        all_ambiguous = False
        cand = replace(cand, approach=approach)
        sp = standoff_pose(cand, cfg)
        sr, sc = grid.world_to_cell(sp.x, sp.y)
        if grid.in_bounds(sr, sc) and region[sr, sc]:
            return cand, False
    return None, all_ambiguous


def run_mission(world: GroundTruthWorld, config: MissionConfig, classifier, seed: int = 0,
                log=None) -> MissionResult:
    """Explore ``world`` and build its material map.

    ``classifier`` needs a ``classify(TapObservation) -> (Material, confidence)``
    method (see :class:`CnnClassifier`, :class:`OracleClassifier`).
    """
    pose = config.start
    planner = config.planner
    sr, sc = math.floor((pose.y - world.origin[1]) / world.resolution), \
        math.floor((pose.x - world.origin[0]) / world.resolution)
    if not (0 <= sr < world.shape[0] and 0 <= sc < world.shape[1]) or world.occupied[sr, sc]:
        raise InvalidPose("start pose must lie in free space")
    fail_rng = np.random.default_rng(np.random.SeedSequence([seed, 101]))
    metrics = RunMetrics(gamma=planner.gamma)
    mat_map = MaterialMap()
    ledger = TapLedger(world.resolution)

    def sense(grid, at):
        return integrate_scan(grid, at, raycast_scan(world, at, config.max_range, config.n_rays))

    def record(tap, label, truth, conf):
        mat_map.markers.append(Marker(tap.position, label, truth, conf))
        tally = metrics.per_material[truth]
        tally[1] += 1
        tally[0] += int(label == truth)
        metrics.total_taps += 1
        metrics.empty_taps += int(label is Material.EMPTY)
        ledger.add(tap)

    def budget_left():
        return config.tap_budget is None or metrics.total_taps < config.tap_budget

    grid = sense(world.blank_grid(), pose)
    previous = None
    exclude = np.zeros(grid.shape, dtype=bool)
    cap = grid.cells.size
    while True:
        metrics.iterations += 1
        if metrics.iterations > cap:
            raise MissionError("iteration cap exceeded")

        # boundary segments touching newly mapped cells
        fresh = diff_map(grid, previous).cells != CellState.UNKNOWN
        segments = {s.id: s for s in analyze(grid, planner)
                    if fresh[s.pixels[:, 0], s.pixels[:, 1]].any()}
        candidates = []
        for seg in segments.values():
            candidates += place_taps(seg, planner, grid.resolution, grid)
        candidates = dedup_taps(candidates, ledger, planner)

        region = reachable_region(grid, pose, config.robot_radius)
        planned = TapLedger(grid.resolution, list(ledger.positions), list(ledger.lineage))
        resolved = []
        for tap in candidates:
            seg = segments[tap.segment_id]
            got, ambiguous = _resolve_tap(tap, seg, grid, region, config)
            if got is None:
                if ambiguous and budget_left():
                    truth = world.material_at(*tap.pixel)
                    record(tap, Material.EMPTY, truth, 1.0)
                else:
                    metrics.unreachable.append(tap.position)
                continue
            if planned.add(got):  # retargeting may land two taps on one cell
                resolved.append(got)

        for tap in order_taps(resolved, pose):
            if not budget_left():
                break
            goal = standoff_pose(tap, config)
            path = navigate(grid, pose, goal, config.robot_radius)
            if path is None:
                metrics.unreachable.append(tap.position)
                continue
            metrics.path_length += path.length
            pose = goal
            obs = execute_tap(world, tap, pose, config.failure, fail_rng,
                              [seed, 202, len(mat_map.markers)], config.snr_db,
                              config.acoustic_model)
            metrics.failed_taps += int(obs.failed)
            label, conf = classifier.classify(obs)
            record(tap, label, obs.truth, conf)
            if log is not None:
                log(f"tap {metrics.total_taps}: {obs.truth.name} -> {label.name}")

        if not budget_left():
            break
        # next frontier
        target = None
        while True:
            clusters = find_frontiers(grid, config.frontier_min_size, pose, exclude)
            region = reachable_region(grid, pose, config.robot_radius)
            choice = choose_frontier(clusters, pose, grid, config.robot_radius, region=region)
            if choice is None:
                break
            goal, cluster = choice
            path = navigate(grid, pose, goal, config.robot_radius)
            if path is None:
                exclude[cluster.cells[:, 0], cluster.cells[:, 1]] = True
                continue
            target = (goal, cluster, path)
            break
        if target is None:
            break
        goal, cluster, path = target
        metrics.path_length += path.length
        pose = goal
        previous = grid
        grid = sense(grid, pose)
        if grid.known_count() == previous.known_count():
            exclude[cluster.cells[:, 0], cluster.cells[:, 1]] = True
        if log is not None:
            log(f"iteration {metrics.iterations}: frontier at ({goal.x:.2f}, {goal.y:.2f})")

    metrics.sim_time = metrics.path_length / config.speed + metrics.total_taps * config.tap_cost
    return MissionResult(mat_map, metrics, grid)
