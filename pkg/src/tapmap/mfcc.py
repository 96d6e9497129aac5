"""40 x 45 MFCC feature matrices for tap clips."""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .acoustics import CLIP_SAMPLES, SAMPLE_RATE, AudioClip

N_MFCC = 40
N_FRAMES = 45
FRAME_LEN = 400
HOP = 160
N_FFT = 512
PREEMPHASIS = 0.97
LOG_FLOOR = 1e-10


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=float) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=float) / 2595.0) - 1.0)


def mel_filterbank(n_filters: int = N_MFCC, n_fft: int = N_FFT,
                   sample_rate: int = SAMPLE_RATE, fmin: float = 0.0,
                   fmax: float | None = None) -> np.ndarray:
    """Unit-peak triangular filters, shape ``(n_filters, n_fft // 2 + 1)``.

    Filter ``k`` rises from mel point ``k`` to ``k + 1`` and falls to ``k + 2``;
    the triangles are evaluated at the exact FFT bin frequencies so even the
    narrowest low filters keep non-zero weight.
    """
    if n_filters < 1:
        raise ValueError("n_filters must be >= 1")
    fmax = sample_rate / 2 if fmax is None else fmax
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_filters + 2))
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    left, centre, right = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rise = (freqs - left) / (centre - left)
    fall = (right - freqs) / (right - centre)
    return np.maximum(0.0, np.minimum(rise, fall))


def filter_centres(n_filters: int = N_MFCC, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2), n_filters + 2))
    return edges[1:-1]


def dct_matrix(n: int = N_MFCC) -> np.ndarray:
    """Orthonormal DCT-II, rows are basis vectors."""
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    d = np.sqrt(2.0 / n) * np.cos(np.pi * k * (2 * i + 1) / (2 * n))
    d[0] /= np.sqrt(2.0)
    return d


_FBANK = mel_filterbank()
_DCT = dct_matrix()
_HANN = np.hanning(FRAME_LEN + 1)[:-1]  # periodic Hann


def log_mel_energies(clip: AudioClip) -> np.ndarray:
    """Log filterbank energies, shape ``(N_MFCC, N_FRAMES)``."""
    x = np.asarray(clip.samples, dtype=float)
    if len(x) != CLIP_SAMPLES or clip.sample_rate != SAMPLE_RATE:
        raise ValueError(f"expected {CLIP_SAMPLES} samples at {SAMPLE_RATE} Hz, "
                         f"got {len(x)} at {clip.sample_rate} Hz")
    x = np.append(x[0], x[1:] - PREEMPHASIS * x[:-1])
    frames = sliding_window_view(x, FRAME_LEN)[::HOP] * _HANN
    power = np.abs(np.fft.rfft(frames, N_FFT)) ** 2
    energies = power @ _FBANK.T
    return np.log(np.maximum(energies, LOG_FLOOR)).T


def compute_mfcc(clip: AudioClip) -> np.ndarray:
    """MFCC matrix, rows = coefficients 0..39, columns = frames."""
    return _DCT @ log_mel_energies(clip)
