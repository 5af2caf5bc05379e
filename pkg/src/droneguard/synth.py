"""Synthetic audio for demos and end-to-end checks.

Backgrounds are coloured or band-filtered noise. "Drones" are harmonic
stacks: a few rotors with fundamentals between 80 and 400 Hz, harmonics
up to about 1500 Hz, slight detuning between rotors, a slow throttle
drift shared by all rotors and a faint noise bed.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy import signal

from .audio_io import DEFAULT_SAMPLE_RATE, AudioClip, write_wav

NOISE_KINDS = ("white", "pink", "brown", "lowpass", "bandpass")


def _normalise(x: np.ndarray, peak: float) -> np.ndarray:
    m = np.max(np.abs(x))
    return x * (peak / m) if m > 0 else x


def noise_background(duration_s: float, rng: np.random.Generator, kind: str | None = None,
                     sample_rate: int = DEFAULT_SAMPLE_RATE, peak: float | None = None) -> np.ndarray:
    """Filtered noise; ``kind`` is drawn at random when not given."""
    n = int(round(duration_s * sample_rate))
    kind = kind or NOISE_KINDS[rng.integers(len(NOISE_KINDS))]
    white = rng.standard_normal(n)
    nyq = sample_rate / 2
    if kind == "white":
        x = white
    elif kind == "pink":
        # 1/f power via spectral shaping
        spec = np.fft.rfft(white)
        f = np.fft.rfftfreq(n, 1.0 / sample_rate)
        spec[1:] /= np.sqrt(f[1:])
        spec[0] = 0
        x = np.fft.irfft(spec, n)
    elif kind == "brown":
        x = signal.lfilter([1.0], [1.0, -0.995], white)
    elif kind == "lowpass":
        cut = rng.uniform(800, 6000)
        x = signal.sosfilt(signal.butter(4, cut / nyq, output="sos"), white)
    elif kind == "bandpass":
        lo = rng.uniform(200, 2000)
        hi = min(lo * rng.uniform(2, 5), nyq * 0.9)
        x = signal.sosfilt(signal.butter(4, [lo / nyq, hi / nyq], btype="band", output="sos"), white)
    else:
        raise ValueError(f"unknown noise kind {kind!r}; choose from {NOISE_KINDS}")
    # slow level fluctuation so the background is not stationary
    t = np.arange(n) / sample_rate
    env = 1.0 + 0.3 * np.sin(2 * np.pi * rng.uniform(0.05, 0.5) * t + rng.uniform(0, 2 * np.pi))
    return _normalise(x * env, peak if peak is not None else rng.uniform(0.2, 0.6))


def drone_sound(duration_s: float, rng: np.random.Generator, sample_rate: int = DEFAULT_SAMPLE_RATE,
                f0: float | None = None, n_rotors: int | None = None, max_freq: float = 1500.0,
                noise_level: float = 0.05, peak: float = 0.3, throttle_depth: float = 0.1) -> np.ndarray:
    n = int(round(duration_s * sample_rate))
    t = np.arange(n) / sample_rate
    f0 = f0 if f0 is not None else rng.uniform(80, 400)
    n_rotors = n_rotors or int(rng.integers(2, 5))
    # shared throttle drift moves every rotor's speed up and down together
    throttle = 1 + throttle_depth * np.sin(2 * np.pi * rng.uniform(0.1, 0.4) * t + rng.uniform(0, 2 * np.pi))
    x = np.zeros(n)
    for _ in range(n_rotors):
        base = f0 * (1 + rng.uniform(-0.03, 0.03))
        wobble = throttle * (1 + 0.01 * np.sin(2 * np.pi * rng.uniform(0.2, 2.0) * t + rng.uniform(0, 2 * np.pi)))
        phase = 2 * np.pi * np.cumsum(base * wobble) / sample_rate
        for h in range(1, int(max_freq // (base * (1 + throttle_depth))) + 1):
            amp = rng.uniform(0.3, 1.0) / h ** 0.7
            x += amp * np.sin(h * phase + rng.uniform(0, 2 * np.pi))
    x = _normalise(x, 1.0) + noise_level * rng.standard_normal(n)
    return _normalise(x, peak)


def write_corpus(out_dir, n_backgrounds: int, n_drones: int, seed: int = 0,
                 background_s: float = 10.0, drone_s: float = 4.0, prefix: str = "",
                 sample_rate: int = DEFAULT_SAMPLE_RATE) -> tuple[Path, Path]:
    """Write ``backgrounds/`` and ``drones/`` WAV folders under ``out_dir``."""
    rng = np.random.default_rng(seed)
    out = Path(out_dir)
    bg_dir, ev_dir = out / "backgrounds", out / "drones"
    bg_dir.mkdir(parents=True, exist_ok=True)
    ev_dir.mkdir(parents=True, exist_ok=True)
    for i in range(n_backgrounds):
        kind = NOISE_KINDS[i % len(NOISE_KINDS)]
        x = noise_background(background_s, rng, kind, sample_rate)
        write_wav(AudioClip(x, sample_rate), bg_dir / f"{prefix}bg{i:02d}.wav")
    # stratify fundamentals so a small corpus still spans 80-400 Hz
    edges = np.linspace(80.0, 400.0, n_drones + 1)
    for i in range(n_drones):
        x = drone_sound(drone_s, rng, sample_rate, f0=rng.uniform(edges[i], edges[i + 1]))
        write_wav(AudioClip(x, sample_rate), ev_dir / f"{prefix}drone{i:02d}.wav")
    return bg_dir, ev_dir
