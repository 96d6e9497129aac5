"""Command line front end plus scenario files, map images and run reports.

Scenario file::

    resolution: 0.05
    start: 1.0 1.5 0.0
    gamma: 1.0
    sigma: 25
    seed: 0
    p_fail: 0.05
    ---
    BBBBBB
    B....B
    BBBBBB

The raster's first line is the top (largest y) row. ``.`` is free space,
letters are materials (see ``LETTERS``).
"""
from __future__ import annotations

import argparse
import csv
import io
import math
import sys
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .boundary import PlannerConfig
from .classifier import (BATCH, EPOCHS, LEARNING_RATE, CnnModel, Dataset, evaluate, load_checkpoint,
                         save_checkpoint, train)
from .gridmap import CellState, GroundTruthWorld, Material, OccupancyGrid, Pose
from .sim_engine import (CnnClassifier, FailureModel, MaterialMap, MissionConfig, OracleClassifier,
                         RunMetrics, run_mission)
from .synthdata import generate_dataset

LETTERS = {
    "M": Material.METAL, "W": Material.WOOD, "C": Material.CARDBOARD, "P": Material.PLASTIC,
    "K": Material.CONCRETE, "G": Material.GLASS, "B": Material.WALL,
}
LETTER_OF = {m: ch for ch, m in LETTERS.items()}
HEADER_KEYS = ("resolution", "start", "gamma", "sigma", "seed", "p_fail")

COLORS = {
    Material.METAL: (135, 206, 235),
    Material.PLASTIC: (0, 128, 0),
    Material.CONCRETE: (255, 0, 0),
    Material.GLASS: (128, 0, 128),
    Material.CARDBOARD: (0, 0, 255),
    Material.WALL: (255, 255, 0),
    Material.WOOD: (139, 69, 19),
}
CELL_COLORS = {CellState.FREE: (255, 255, 255), CellState.OCCUPIED: (0, 0, 0),
               CellState.UNKNOWN: (128, 128, 128)}
BUNDLED = ("hallway", "gateway", "flushdoor")


class ScenarioError(ValueError):
    def __init__(self, msg: str, line: int, col: int = 1, source: str = "<scenario>"):
        super().__init__(f"{source}:{line}:{col}: {msg}")
        self.line = line
        self.col = col


@dataclass(frozen=True)
class ScenarioConfig:
    resolution: float = 0.05
    start: Pose = Pose(0.0, 0.0, 0.0)
    gamma: float = 1.0
    sigma: int = 25
    seed: int = 0
    p_fail: float = 0.05

    def mission(self, **overrides) -> MissionConfig:
        planner = PlannerConfig(sigma=self.sigma, gamma=self.gamma)
        cfg = MissionConfig(planner=planner, start=self.start,
                            failure=FailureModel(p_fail=self.p_fail))
        return replace(cfg, **overrides)


def parse_scenario(text: str, name: str = "scenario", source: str = "<scenario>"):
    """Parse scenario text into ``(GroundTruthWorld, ScenarioConfig)``."""
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    try:
        sep = lines.index("---")
    except ValueError:
        raise ScenarioError("missing '---' line between header and raster", len(lines) + 1,
                            source=source) from None
    values = {}
    for i, line in enumerate(lines[:sep], start=1):
        if not line.strip():
            continue
        key, colon, rest = line.partition(":")
        key = key.strip()
        if not colon or key not in HEADER_KEYS:
            raise ScenarioError(f"unknown header line {line!r}", i, source=source)
        if key in values:
            raise ScenarioError(f"duplicate key {key!r}", i, source=source)
        try:
            if key == "start":
                x, y, th = (float(v) for v in rest.split())
                values[key] = Pose(x, y, th)
            elif key in ("sigma", "seed"):
                values[key] = int(rest)
            else:
                values[key] = float(rest)
        except ValueError:
            raise ScenarioError(f"bad value for {key!r}: {rest.strip()!r}", i,
                                len(key) + 2, source) from None
    missing = [k for k in HEADER_KEYS if k not in values]
    if missing:
        raise ScenarioError(f"missing header keys: {', '.join(missing)}", sep + 1, source=source)
    cfg = ScenarioConfig(**values)
    if not cfg.resolution > 0 or not cfg.gamma > 0 or cfg.sigma < 1 or not 0 <= cfg.p_fail <= 1:
        raise ScenarioError("resolution and gamma must be positive, sigma >= 1, "
                            "p_fail in [0, 1]", 1, source=source)

    rows = lines[sep + 1:]
    if not rows:
        raise ScenarioError("empty raster", sep + 2, source=source)
    width = len(rows[0])
    mats = np.full((len(rows), width), -1, dtype=np.int8)
    for k, row in enumerate(rows):
        lineno = sep + 2 + k
        if len(row) != width:
            raise ScenarioError(f"ragged raster: row {k + 1} has {len(row)} cells, "
                                f"expected {width}", lineno, min(len(row), width) + 1, source)
        for j, ch in enumerate(row):
            if ch == ".":
                continue
            if ch not in LETTERS:
                raise ScenarioError(f"unknown material letter {ch!r}", lineno, j + 1, source)
            mats[len(rows) - 1 - k, j] = LETTERS[ch]
    world = GroundTruthWorld(mats, cfg.resolution, (0.0, 0.0), name)
    r = math.floor(cfg.start.y / cfg.resolution)
    c = math.floor(cfg.start.x / cfg.resolution)
    if not (0 <= r < mats.shape[0] and 0 <= c < width):
        raise ScenarioError("start lies outside the raster", _line_of(lines, "start"), source=source)
    if mats[r, c] >= 0:
        raise ScenarioError("start lies on an obstacle", sep + 2 + len(rows) - 1 - r, c + 1, source)
    return world, cfg


def _line_of(lines, key) -> int:
    return next(i for i, ln in enumerate(lines, start=1) if ln.split(":")[0].strip() == key)


def format_scenario(world: GroundTruthWorld, cfg: ScenarioConfig) -> str:
    """Canonical text for a scenario; ``parse_scenario`` inverts it exactly."""
    s = cfg.start
    out = [f"resolution: {cfg.resolution!r}", f"start: {s.x!r} {s.y!r} {s.heading!r}",
           f"gamma: {cfg.gamma!r}", f"sigma: {cfg.sigma}", f"seed: {cfg.seed}",
           f"p_fail: {cfg.p_fail!r}", "---"]
    for row in world.materials[::-1]:
        out.append("".join("." if v < 0 else LETTER_OF[Material(v)] for v in row))
    return "\n".join(out) + "\n"


def load_scenario(path):
    """Load a scenario file, or a bundled scenario by name (``hallway``...)."""
    p = Path(path)
    if not p.exists() and str(path) in BUNDLED:
        text = resources.files("tapmap.scenarios").joinpath(f"{path}.txt").read_text()
        return parse_scenario(text, str(path), f"{path}.txt")
    return parse_scenario(p.read_text(), p.stem, str(p))


def save_scenario(world: GroundTruthWorld, cfg: ScenarioConfig, path) -> None:
    Path(path).write_text(format_scenario(world, cfg))


def material_map_image(material_map: MaterialMap, grid: OccupancyGrid) -> np.ndarray:
    """RGB image, top row = largest y."""
    img = np.zeros(grid.shape + (3,), dtype=np.uint8)
    for state, rgb in CELL_COLORS.items():
        img[grid.cells == state] = rgb
    h, w = grid.shape
    for mk in material_map.markers:
        if mk.classified is Material.EMPTY:
            continue
        r, c = grid.world_to_cell(*mk.position)
        img[max(r - 1, 0):min(r + 2, h), max(c - 1, 0):min(c + 2, w)] = COLORS[mk.classified]
    return img[::-1]


def render_material_map(material_map: MaterialMap, grid: OccupancyGrid, path) -> None:
    """Binary PPM (P6) of the grid with material markers."""
    img = material_map_image(material_map, grid)
    data = b"P6\n%d %d\n255\n" % (img.shape[1], img.shape[0]) + img.tobytes()
    try:
        Path(path).write_bytes(data)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc


def read_ppm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    magic, w, h, maxval, pixels = raw.split(maxsplit=4)
    if magic != b"P6" or maxval != b"255":
        raise ValueError(f"{path}: not an 8-bit P6 image")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(int(h), int(w), 3)


def format_report(metrics: RunMetrics, scenario: str = "", seed: int = 0) -> str:
    """Run report as ``key: value`` lines with fixed key names."""
    lines = [f"scenario: {scenario}", f"seed: {seed}", f"gamma: {metrics.gamma!r}"]
    for mat, (correct, attempted) in metrics.per_material.items():
        name = mat.name.lower()
        lines += [f"{name}_correct: {correct}", f"{name}_attempted: {attempted}"]
    acc = metrics.accuracy
    lines += [
        f"correct: {metrics.correct}",
        f"attempted: {metrics.attempted}",
        f"accuracy: {acc:.6f}" if not math.isnan(acc) else "accuracy: nan",
        f"total_taps: {metrics.total_taps}",
        f"empty_taps: {metrics.empty_taps}",
        f"failed_taps: {metrics.failed_taps}",
        f"unreachable_taps: {len(metrics.unreachable)}",
        f"iterations: {metrics.iterations}",
        f"path_length_m: {metrics.path_length:.6f}",
        f"time_s: {metrics.sim_time:.6f}",
    ]
    return "\n".join(lines) + "\n"


def parse_report(text: str) -> dict[str, str]:
    out = {}
    for line in text.splitlines():
        key, _, value = line.partition(": ")
        out[key] = value
    return out


def format_markers(material_map: MaterialMap) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["x", "y", "classified", "true", "confidence"])
    for mk in material_map.markers:
        wr.writerow([f"{mk.position[0]:.4f}", f"{mk.position[1]:.4f}", mk.classified.name.lower(),
                     mk.truth.name.lower(), f"{mk.confidence:.6f}"])
    return buf.getvalue()


def read_markers(path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# commands

def _classifier(args):
    if args.oracle:
        return OracleClassifier()
    return CnnClassifier(load_checkpoint(args.model))


def _mission(args, gamma=None):
    world, sc = load_scenario(args.scenario)
    sc = replace(sc, gamma=gamma if gamma is not None else (args.gamma or sc.gamma),
                 sigma=args.sigma or sc.sigma,
                 seed=sc.seed if args.seed is None else args.seed,
                 p_fail=sc.p_fail if args.p_fail is None else args.p_fail)
    cfg = sc.mission(tap_budget=args.tap_budget)
    return world, sc, cfg


def _run_one(args, world, sc, cfg, out_dir: Path, classifier):
    result = run_mission(world, cfg, classifier, sc.seed)
    out_dir.mkdir(parents=True, exist_ok=True)
    render_material_map(result.material_map, result.grid, out_dir / "map.ppm")
    (out_dir / "report.txt").write_text(format_report(result.metrics, world.name, sc.seed))
    (out_dir / "markers.csv").write_text(format_markers(result.material_map))
    return result


def cmd_gen_data(args) -> None:
    data = generate_dataset(args.per_class, args.seed, args.snr_db)
    data.save(args.out)
    print(f"{len(data)} clips ({args.per_class} per class) -> {args.out}")


def cmd_train(args) -> None:
    data = Dataset.load(args.data)
    log = (lambda s: print(s, file=sys.stderr)) if args.verbose else None
    model, hist = train(CnnModel.create(args.seed), data, epochs=args.epochs, batch=args.batch,
                        lr=args.lr, seed=args.seed, log=log)
    save_checkpoint(model, args.out)
    print(f"test accuracy {hist.test_acc[-1]:.4f} -> {args.out}")


def cmd_eval(args) -> None:
    cm, acc = evaluate(load_checkpoint(args.model), Dataset.load(args.data))
    names = [m.name.lower() for m in Material]
    lines = ["true\\pred " + " ".join(f"{n:>9}" for n in names)]
    for name, row in zip(names, cm):
        lines.append(f"{name:>10} " + " ".join(f"{v:9.3f}" for v in row))
    lines.append(f"mean_class_accuracy: {acc:.6f}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")


def cmd_run(args) -> None:
    world, sc, cfg = _mission(args)
    result = _run_one(args, world, sc, cfg, Path(args.out_dir), _classifier(args))
    m = result.metrics
    print(f"{m.total_taps} taps, accuracy {m.accuracy:.3f}, time {m.sim_time:.1f} s -> {args.out_dir}")


def cmd_sweep(args) -> None:
    gammas = [float(g) for g in args.gammas.split(",")]
    classifier = _classifier(args)
    rows = ["gamma  taps  empty  accuracy  time_s"]
    for g in gammas:
        world, sc, cfg = _mission(args, gamma=g)
        m = _run_one(args, world, sc, cfg, Path(args.out_dir) / f"gamma_{g:g}", classifier).metrics
        rows.append(f"{g:5g} {m.total_taps:5d} {m.empty_taps:6d} {m.accuracy:9.3f} {m.sim_time:7.1f}")
    table = "\n".join(rows) + "\n"
    Path(args.out_dir).mkdir(parents=True, exist_ok=True)
    (Path(args.out_dir) / "sweep.txt").write_text(table)
    print(table, end="")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tapmap", description="Tap-based material mapping simulator")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="synthesise a labelled MFCC dataset")
    p.add_argument("--per-class", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--snr-db", type=float, default=10.0)
    p.add_argument("--out", default="dataset.npz")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train the CNN on a generated dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--epochs", type=int, default=EPOCHS)
    p.add_argument("--batch", type=int, default=BATCH)
    p.add_argument("--lr", type=float, default=LEARNING_RATE)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="model.bin")
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="confusion matrix on the test split")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    for name, func in (("run", cmd_run), ("sweep", cmd_sweep)):
        p = sub.add_parser(name, help="explore a scenario and map its materials" if name == "run"
                           else "run a scenario over several gamma values")
        p.add_argument("--scenario", required=True,
                       help="scenario file or bundled name (" + ", ".join(BUNDLED) + ")")
        if name == "run":
            p.add_argument("--gamma", type=float)
        else:
            p.add_argument("--gammas", default="0.5,1,2")
        p.add_argument("--sigma", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--p-fail", type=float)
        p.add_argument("--tap-budget", type=int)
        p.add_argument("--out-dir", required=True)
        who = p.add_mutually_exclusive_group(required=True)
        who.add_argument("--model", help="CNN checkpoint")
        who.add_argument("--oracle", action="store_true", help="perfect classifier")
        p.set_defaults(func=func)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (OSError, ValueError) as exc:
        print(f"tapmap: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
