"""Synthetic labelled tap dataset: acquisition chain + MFCC, stratified split."""
from __future__ import annotations

import numpy as np

from .acoustics import MaterialAcousticModel, record_tap, record_taps
from .classifier import Dataset, stratified_split
from .gridmap import Material
from .mfcc import compute_mfcc

CHUNK = 200  # clips per batched NLMS run


def tap_features(material: Material, seed, snr_db: float = 10.0,
                 model: MaterialAcousticModel | None = None) -> np.ndarray:
    return compute_mfcc(record_tap(material, seed, snr_db, model)).astype(np.float32)


def generate_dataset(per_class: int = 100, seed: int = 0, snr_db: float = 10.0,
                     train_fraction: float = 0.7,
                     model: MaterialAcousticModel | None = None) -> Dataset:
    """``per_class`` NLMS-cleaned clips of each of the 8 classes as MFCC matrices."""
    mats = [mat for mat in Material for _ in range(per_class)]
    seeds = [[seed, int(mat), i] for mat in Material for i in range(per_class)]
    X = []
    for lo in range(0, len(mats), CHUNK):
        clips = record_taps(mats[lo:lo + CHUNK], seeds[lo:lo + CHUNK], snr_db, model)
        X += [compute_mfcc(c).astype(np.float32) for c in clips]
    y = np.array([int(m) for m in mats])
    return Dataset(np.stack(X), y, stratified_split(y, train_fraction, seed))
