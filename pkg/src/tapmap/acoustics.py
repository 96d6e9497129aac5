"""Synthetic tap sounds, two-microphone observation and NLMS noise cancelling.

Tap sounds are modal: a handful of exponentially damped sinusoids plus a
short broadband strike transient. Frequencies, damping and amplitudes are
jittered per tap so that every seed gives a different but same-material
sound.
"""
from __future__ import annotations

import math
import wave
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from .gridmap import Material

SAMPLE_RATE = 16000
CLIP_SAMPLES = 7440
LEAD_IN = 4000  # noise-only samples recorded before the strike
STRIKE_SECONDS = 0.005
PEAK = 0.5
NOMINAL_TAP_POWER = 0.0025  # reference power for SNR scaling in the simulated rig
NLMS_TAPS = 16  # twice the simulated leak channel
NLMS_MU = 0.01  # small enough that the tap itself barely disturbs the converged filter


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("audio clip contains NaN or Inf")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def power(self) -> float:
        return float(np.mean(self.samples ** 2)) if len(self.samples) else 0.0


@dataclass
class MicPair:
    front: AudioClip
    rear: AudioClip

    def __post_init__(self):
        if len(self.front) != len(self.rear) or self.front.sample_rate != self.rear.sample_rate:
            raise ValueError("front and rear clips must be synchronised")


@dataclass(frozen=True)
class Mode:
    freq: float  # Hz
    damping: float  # 1/s
    amp: float


@dataclass
class MaterialAcousticModel:
    modes: dict[Material, list[Mode]]
    strike: dict[Material, float]  # transient amplitude relative to modes
    freq_jitter: float = 0.04
    damping_jitter: float = 0.15
    amp_jitter: float = 0.25
    sample_rate: int = SAMPLE_RATE
    length: int = CLIP_SAMPLES

    def __post_init__(self):
        nyquist = self.sample_rate / 2
        for mat, modes in self.modes.items():
            for m in modes:
                if m.freq * (1 + self.freq_jitter) >= nyquist:
                    raise ValueError(f"{mat.name}: mode at {m.freq} Hz reaches Nyquist")
                if m.damping <= 0:
                    raise ValueError(f"{mat.name}: damping must be positive")


def default_model() -> MaterialAcousticModel:
    M = Material
    modes = {
        M.METAL: [Mode(2500, 6, 1.0), Mode(5200, 9, 0.6), Mode(7000, 12, 0.35)],
        M.GLASS: [Mode(1800, 14, 1.0), Mode(3900, 20, 0.5)],
        M.WOOD: [Mode(650, 25, 1.0), Mode(4500, 60, 0.3)],
        M.PLASTIC: [Mode(1000, 30, 1.0), Mode(3000, 40, 0.6)],
        M.CARDBOARD: [Mode(380, 35, 1.0)],
        M.CONCRETE: [Mode(1400, 40, 1.0)],
        M.WALL: [Mode(170, 25, 1.0)],
        M.EMPTY: [],
    }
    strike = {
        M.METAL: 0.1, M.GLASS: 0.15, M.WOOD: 0.3, M.PLASTIC: 0.3,
        M.CARDBOARD: 0.5, M.CONCRETE: 0.6, M.WALL: 0.25, M.EMPTY: 0.0,
    }
    return MaterialAcousticModel(modes, strike)


def synthesize_tap(material: Material, model: MaterialAcousticModel | None = None,
                   seed=0) -> AudioClip:
    """One tap on ``material``, peak-normalised to 0.5.

    Empty taps are a faint hiss well below 0.01 with no strike.
    """
    model = model or default_model()
    rng = np.random.default_rng(seed)
    n, fs = model.length, model.sample_rate
    t = np.arange(n) / fs
    material = Material(material)
    if material is Material.EMPTY or not model.modes.get(material):
        return AudioClip(0.002 * np.tanh(rng.standard_normal(n)), fs)

    x = np.zeros(n)
    for m in model.modes[material]:
        f = m.freq * (1 + rng.uniform(-model.freq_jitter, model.freq_jitter))
        d = m.damping * (1 + rng.uniform(-model.damping_jitter, model.damping_jitter))
        a = m.amp * (1 + rng.uniform(-model.amp_jitter, model.amp_jitter))
        phase = rng.uniform(0, 2 * math.pi)
        x += a * np.exp(-d * t) * np.sin(2 * math.pi * f * t + phase)
    k = int(STRIKE_SECONDS * fs)
    level = model.strike.get(material, 0.0)
    x[:k] += level * rng.standard_normal(k) * np.exp(-np.arange(k) / (k / 4))
    x *= PEAK / np.max(np.abs(x))
    return AudioClip(x, fs)


def background_noise(n: int, seed=0, sample_rate: int = SAMPLE_RATE) -> AudioClip:
    """Stationary robot/room noise: low-passed hiss plus a motor hum, unit power."""
    rng = np.random.default_rng(seed)
    white = rng.standard_normal(n)
    pole = rng.uniform(0.3, 0.7)
    hiss = signal.lfilter([1.0], [1.0, -pole], white)
    t = np.arange(n) / sample_rate
    f0 = rng.uniform(90, 140)
    hum = sum(np.sin(2 * math.pi * h * f0 * t + rng.uniform(0, 2 * math.pi)) / h for h in (1, 2, 3))
    x = hiss / hiss.std() + 0.5 * hum
    return AudioClip(x / np.sqrt(np.mean(x ** 2)), sample_rate)


def random_channel(seed=0, taps: int = 8) -> np.ndarray:
    """Decaying random FIR for the rear-to-front noise path."""
    rng = np.random.default_rng(seed)
    h = rng.standard_normal(taps) * np.exp(-np.arange(taps) / 3.0)
    return h / np.linalg.norm(h)


def observe(tap: AudioClip, noise: AudioClip, channel=(1.0,), snr_db: float = 10.0,
            signal_power: float | None = None) -> MicPair:
    """Simulate the two microphones.

    ``rear`` is the scaled noise, ``front`` the tap plus that noise through
    ``channel``. Noise is scaled so that ``signal_power`` over the filtered
    noise power equals ``snr_db``; ``signal_power`` defaults to the tap's own
    power, and a silent tap leaves the noise unscaled. A noise clip longer than
    the tap yields a lead-in: the tap starts after the extra samples.
    """
    channel = np.atleast_1d(np.asarray(channel, dtype=float))
    if len(channel) > 64:
        raise ValueError("channel longer than 64 taps")
    lead = len(noise) - len(tap)
    if lead < 0:
        raise ValueError("noise clip shorter than tap clip")
    filtered = np.convolve(noise.samples, channel)[:len(noise)]
    power = tap.power if signal_power is None else signal_power
    if math.isinf(snr_db) and snr_db > 0:
        scale = 0.0
    elif power > 0:
        fp = float(np.mean(filtered[lead:] ** 2))
        scale = math.sqrt(power / (fp * 10 ** (snr_db / 10))) if fp > 0 else 0.0
    else:
        scale = 1.0
    front = scale * filtered
    front[lead:] += tap.samples
    return MicPair(AudioClip(front, tap.sample_rate), AudioClip(scale * noise.samples, tap.sample_rate))


def nlms_cancel(pair: MicPair, filter_len: int = NLMS_TAPS, mu: float = NLMS_MU,
                eps: float = 1e-6) -> AudioClip:
    """Adaptive noise cancelling with normalised LMS.

    The rear microphone drives an FIR estimate of the noise reaching the
    front one; the returned error signal ``front - estimate`` is the cleaned
    tap.
    """
    e = nlms_cancel_batch(pair.front.samples[None], pair.rear.samples[None], filter_len, mu, eps)
    return AudioClip(e[0], pair.front.sample_rate)


def nlms_cancel_batch(front: np.ndarray, rear: np.ndarray, filter_len: int = NLMS_TAPS,
                      mu: float = NLMS_MU, eps: float = 1e-6) -> np.ndarray:
    """:func:`nlms_cancel` run independently on each row of ``(B, n)`` arrays."""
    if filter_len < 1 or not 0 < mu <= 2 or eps <= 0:
        raise ValueError("need filter_len >= 1, 0 < mu <= 2 and eps > 0")
    d = np.atleast_2d(np.asarray(front, dtype=float))
    x = np.atleast_2d(np.asarray(rear, dtype=float))
    if d.shape != x.shape:
        raise ValueError("front and rear must have the same shape")
    if not (np.all(np.isfinite(d)) and np.all(np.isfinite(x))):
        raise ValueError("non-finite input to NLMS")
    b, n = d.shape
    # weights are stored oldest-first so each step reads a plain slice
    padded = np.concatenate([np.zeros((b, filter_len - 1)), x], axis=1)
    csum = np.concatenate([np.zeros((b, 1)), np.cumsum(padded ** 2, axis=1)], axis=1)
    energy = csum[:, filter_len:] - csum[:, :-filter_len]
    w = np.zeros((b, filter_len))
    e = np.empty((b, n))
    for i in range(n):
        xi = padded[:, i:i + filter_len]
        err = d[:, i] - np.einsum("ij,ij->i", w, xi)
        e[:, i] = err
        w += (mu * err / (eps + energy[:, i]))[:, None] * xi
    return e


def _acquire(material: Material, seed, snr_db, model, lead_in) -> MicPair:
    ss = np.random.SeedSequence(seed if isinstance(seed, (list, tuple)) else [int(seed)])
    s_tap, s_noise, s_chan = ss.spawn(3)
    tap = synthesize_tap(material, model, s_tap)
    noise = background_noise(len(tap) + lead_in, s_noise, tap.sample_rate)
    return observe(tap, noise, random_channel(s_chan), snr_db, signal_power=NOMINAL_TAP_POWER)


def record_tap(material: Material, seed, snr_db: float = 10.0,
               model: MaterialAcousticModel | None = None,
               lead_in: int = LEAD_IN, **nlms_kw) -> AudioClip:
    """Full acquisition chain for one tap: synthesis, microphones, NLMS.

    Returns the cleaned clip with the lead-in removed.
    """
    return record_taps([material], [seed], snr_db, model, lead_in, **nlms_kw)[0]


def record_taps(materials, seeds, snr_db: float = 10.0,
                model: MaterialAcousticModel | None = None,
                lead_in: int = LEAD_IN, **nlms_kw) -> list[AudioClip]:
    """:func:`record_tap` for many taps at once (the NLMS runs batched)."""
    pairs = [_acquire(m, s, snr_db, model, lead_in) for m, s in zip(materials, seeds, strict=True)]
    if not pairs:
        return []
    clean = nlms_cancel_batch(np.stack([p.front.samples for p in pairs]),
                              np.stack([p.rear.samples for p in pairs]), **nlms_kw)
    fs = pairs[0].front.sample_rate
    return [AudioClip(row[lead_in:], fs) for row in clean]


def write_wav(clip: AudioClip, path) -> None:
    """16-bit little-endian mono PCM."""
    pcm = np.clip(np.round(clip.samples * 32767), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(clip.sample_rate)
        wf.writeframes(pcm.tobytes())
