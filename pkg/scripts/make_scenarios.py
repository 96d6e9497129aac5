"""Regenerate the bundled scenario files from their rectangle layouts."""
from pathlib import Path

import numpy as np

from tapmap.cli import LETTERS, ScenarioConfig, save_scenario
from tapmap.gridmap import GroundTruthWorld, Pose

OUT = Path(__file__).resolve().parents[1] / "src" / "tapmap" / "scenarios"


def room(h, w, thick=3, letter="B"):
    m = np.full((h, w), -1, dtype=np.int8)
    code = LETTERS[letter]
    m[:thick], m[-thick:], m[:, :thick], m[:, -thick:] = code, code, code, code
    return m


def put(m, rows, cols, letter):
    # rows/cols are half-open (lo, hi) ranges; row 0 is the bottom of the map
    m[rows[0]:rows[1], cols[0]:cols[1]] = LETTERS[letter]


def hallway():
    m = room(60, 200)
    put(m, (3, 14), (20, 36), "C")  # cardboard boxes
    put(m, (3, 12), (60, 72), "P")  # plastic bin
    put(m, (3, 12), (110, 136), "M")  # filing cabinet
    put(m, (3, 16), (160, 172), "K")  # pillar
    put(m, (54, 57), (40, 57), "W")  # door frame
    put(m, (54, 57), (88, 110), "G")  # glass panel
    put(m, (47, 57), (140, 160), "M")  # locker
    put(m, (54, 57), (178, 192), "W")
    return m, ScenarioConfig(0.05, Pose(0.5, 1.5, 0.0), 1.0, 25, 0, 0.05)


def gateway():
    m = room(120, 120)
    put(m, (50, 70), (50, 70), "M")  # machine
    put(m, (85, 100), (15, 35), "W")  # bench
    put(m, (15, 30), (80, 100), "C")
    put(m, (88, 104), (85, 100), "P")
    put(m, (15, 27), (15, 27), "K")
    put(m, (40, 80), (113, 117), "G")  # glass along the east wall
    put(m, (58, 62), (3, 30), "B")  # partition
    return m, ScenarioConfig(0.05, Pose(3.0, 1.0, 0.0), 1.0, 25, 0, 0.05)


def flushdoor():
    # a door set flush into the top wall, centred on that wall's inner face
    m = room(50, 120)
    put(m, (47, 50), (54, 66), "W")
    return m, ScenarioConfig(0.05, Pose(3.0, 1.25, 0.0), 1.0, 25, 0, 0.0)


if __name__ == "__main__":
    for build in (hallway, gateway, flushdoor):
        mats, cfg = build()
        save_scenario(GroundTruthWorld(mats, cfg.resolution, name=build.__name__), cfg,
                      OUT / f"{build.__name__}.txt")
        print(OUT / f"{build.__name__}.txt")
