"""Framing, power spectra, mel filterbanks, log-mel and MFCC features.

Both feature views share one framing (40 ms Hann window, 20 ms hop by
default) so that GMM and neural timelines line up frame for frame. Neural
inputs are 12-frame log-mel windows: 12 frames at a 20 ms hop span 240 ms,
and 12x40 is the only input size that the CNN's 3*10*256 flatten admits after
two 2x2 poolings.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import get_window

from .audio_io import AudioClip


class FeatureConfigError(ValueError):
    pass


@dataclass(frozen=True)
class FrameSpec:
    window_ms: float = 40.0
    hop_ms: float = 20.0
    window_fn: str = "hann"

    def __post_init__(self):
        if not 0 < self.hop_ms <= self.window_ms:
            raise FeatureConfigError(
                f"need 0 < hop_ms <= window_ms, got hop {self.hop_ms}, window {self.window_ms}"
            )

    def window_samples(self, sample_rate: int) -> int:
        return int(round(self.window_ms * sample_rate / 1000.0))

    def hop_samples(self, sample_rate: int) -> int:
        return int(round(self.hop_ms * sample_rate / 1000.0))


@dataclass(frozen=True)
class MelConfig:
    n_mels: int = 40
    f_min: float = 0.0
    f_max: float = 1500.0
    n_fft: int = 2048
    log_floor: float = 1e-10

    def validate(self, sample_rate: int, window_samples: int | None = None) -> None:
        if self.n_mels < 1:
            raise FeatureConfigError(f"n_mels must be >= 1, got {self.n_mels}")
        if not 0 <= self.f_min < self.f_max <= sample_rate / 2:
            raise FeatureConfigError(
                f"need 0 <= f_min < f_max <= {sample_rate / 2} Hz, got [{self.f_min}, {self.f_max}]"
            )
        if window_samples is not None and self.n_fft < window_samples:
            raise FeatureConfigError(f"n_fft {self.n_fft} shorter than window of {window_samples} samples")
        if self.log_floor <= 0:
            raise FeatureConfigError("log_floor must be positive")


@dataclass(frozen=True)
class FeatureConfig:
    """Everything needed to turn a clip into either feature view."""

    sample_rate: int = 24000
    frame: FrameSpec = field(default_factory=FrameSpec)
    mel: MelConfig = field(default_factory=MelConfig)
    n_mfcc: int = 20
    frames_per_window: int = 12
    # MFCCs over the full band (0..Nyquist) instead of the 1500 Hz focus band
    mfcc_full_band: bool = False

    def __post_init__(self):
        self.mel.validate(self.sample_rate, self.frame.window_samples(self.sample_rate))
        if not 1 <= self.n_mfcc <= self.mel.n_mels:
            raise FeatureConfigError(f"n_mfcc must be in [1, n_mels], got {self.n_mfcc}")
        if self.frames_per_window < 1:
            raise FeatureConfigError("frames_per_window must be >= 1")

    @property
    def hop_s(self) -> float:
        return self.frame.hop_samples(self.sample_rate) / self.sample_rate

    def mfcc_mel(self) -> MelConfig:
        if not self.mfcc_full_band:
            return self.mel
        return MelConfig(self.mel.n_mels, 0.0, self.sample_rate / 2, self.mel.n_fft, self.mel.log_floor)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureConfig":
        d = dict(d)
        d["frame"] = FrameSpec(**d["frame"])
        d["mel"] = MelConfig(**d["mel"])
        return cls(**d)


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    frames: np.ndarray  # (T, D), time-major
    frame_times: np.ndarray  # (T,) start offsets, seconds
    kind: str  # "mfcc" | "log_mel"
    config: FeatureConfig
    duration_s: float

    def __post_init__(self):
        if self.kind not in ("mfcc", "log_mel"):
            raise ValueError(f"unknown feature kind {self.kind!r}")
        if self.frames.ndim != 2 or self.frames.shape[0] != self.frame_times.shape[0]:
            raise ValueError("frames must be (T, D) with T matching frame_times")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def hop_s(self) -> float:
        return self.config.hop_s


def frame_count(n_samples: int, win: int, hop: int) -> int:
    if n_samples < win:
        return 0
    return (n_samples - win) // hop + 1


def frame_signal(clip: AudioClip, spec: FrameSpec) -> np.ndarray:
    """Windowed frames; frame i covers samples [i*hop, i*hop + win). Tail is dropped."""
    win = spec.window_samples(clip.sample_rate)
    hop = spec.hop_samples(clip.sample_rate)
    n = frame_count(len(clip), win, hop)
    if n == 0:
        return np.zeros((0, win))
    view = np.lib.stride_tricks.sliding_window_view(clip.samples, win)[::hop][:n]
    taper = window_function(spec.window_fn, win)
    return view * taper


def window_function(name: str, length: int) -> np.ndarray:
    if name in ("rect", "rectangular", "boxcar", "none"):
        return np.ones(length)
    return get_window(name, length, fftbins=True)


def power_spectrogram(frames: np.ndarray, n_fft: int) -> np.ndarray:
    """|DFT|^2 of each (zero-padded) frame, shape (T, n_fft//2 + 1)."""
    frames = np.atleast_2d(frames)
    if frames.shape[1] > n_fft:
        raise FeatureConfigError(f"frame length {frames.shape[1]} exceeds n_fft {n_fft}")
    spec = np.fft.rfft(frames, n=n_fft, axis=1)
    return spec.real ** 2 + spec.imag ** 2


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(cfg: MelConfig, sample_rate: int) -> np.ndarray:
    """Triangular filters (peak 1) with centers equally spaced in mel.

    Weights are evaluated at the FFT bin frequencies, so each bin lies under
    at most two adjacent triangles.
    """
    cfg.validate(sample_rate)
    n_bins = cfg.n_fft // 2 + 1
    bin_hz = np.arange(n_bins) * sample_rate / cfg.n_fft
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.f_min), hz_to_mel(cfg.f_max), cfg.n_mels + 2))
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bin_hz - lo) / (mid - lo)
    falling = (hi - bin_hz) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    empty = np.flatnonzero(fb.sum(axis=1) == 0)
    if empty.size:
        raise FeatureConfigError(
            f"mel filter {int(empty[0])} has no FFT bin under it; "
            f"reduce n_mels ({cfg.n_mels}) or raise n_fft ({cfg.n_fft})"
        )
    return fb


def log_mel(power_spec: np.ndarray, filterbank: np.ndarray, log_floor: float = 1e-10) -> np.ndarray:
    return np.log(np.maximum(power_spec @ filterbank.T, log_floor))


def dct_basis(n: int) -> np.ndarray:
    """Orthonormal DCT-II matrix B with y = B @ x."""
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    basis = np.cos(np.pi * k * (2 * i + 1) / (2 * n)) * np.sqrt(2.0 / n)
    basis[0] /= np.sqrt(2.0)
    return basis


def mfcc(log_mel_rows: np.ndarray, n_coeffs: int = 20) -> np.ndarray:
    """Orthonormal DCT-II of each log-mel row, keeping coefficients 0..n_coeffs-1."""
    n_mels = log_mel_rows.shape[-1]
    if n_coeffs > n_mels:
        raise FeatureConfigError(f"n_coeffs {n_coeffs} > n_mels {n_mels}")
    return log_mel_rows @ dct_basis(n_mels)[:n_coeffs].T


def _frame_times(clip: AudioClip, cfg: FeatureConfig, n: int) -> np.ndarray:
    return np.arange(n) * cfg.hop_s


def _check_rate(clip: AudioClip, cfg: FeatureConfig) -> None:
    if clip.sample_rate != cfg.sample_rate:
        raise FeatureConfigError(
            f"clip is at {clip.sample_rate} Hz but features expect {cfg.sample_rate} Hz; resample first"
        )


def compute_power(clip: AudioClip, cfg: FeatureConfig) -> np.ndarray:
    _check_rate(clip, cfg)
    return power_spectrogram(frame_signal(clip, cfg.frame), cfg.mel.n_fft)


def compute_log_mel(clip: AudioClip, cfg: FeatureConfig, power: np.ndarray | None = None) -> FeatureMatrix:
    if power is None:
        power = compute_power(clip, cfg)
    rows = log_mel(power, mel_filterbank(cfg.mel, cfg.sample_rate), cfg.mel.log_floor)
    return FeatureMatrix(rows, _frame_times(clip, cfg, len(rows)), "log_mel", cfg, clip.duration_seconds)


def compute_mfcc(clip: AudioClip, cfg: FeatureConfig, power: np.ndarray | None = None) -> FeatureMatrix:
    if power is None:
        power = compute_power(clip, cfg)
    mel_cfg = cfg.mfcc_mel()
    rows = mfcc(log_mel(power, mel_filterbank(mel_cfg, cfg.sample_rate), mel_cfg.log_floor), cfg.n_mfcc)
    return FeatureMatrix(rows, _frame_times(clip, cfg, len(rows)), "mfcc", cfg, clip.duration_seconds)


def nn_windows(features: FeatureMatrix, frames_per_window: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Stride-1 windows of consecutive log-mel frames.

    Returns ``(windows, centers)`` with windows shaped (T - F + 1, F, D) and
    centers the midpoint time of the audio each window spans.
    """
    if features.kind != "log_mel":
        raise ValueError(f"nn_windows expects log_mel features, got {features.kind}")
    cfg = features.config
    f = frames_per_window or cfg.frames_per_window
    T, D = features.frames.shape
    if T < f:
        return np.zeros((0, f, D)), np.zeros(0)
    windows = np.lib.stride_tricks.sliding_window_view(features.frames, (f, D))[:, 0]
    hop = cfg.frame.hop_samples(cfg.sample_rate)
    win = cfg.frame.window_samples(cfg.sample_rate)
    span_s = ((f - 1) * hop + win) / cfg.sample_rate
    centers = features.frame_times[: T - f + 1] + span_s / 2
    return windows, centers


# --- on-disk formats -------------------------------------------------------

FEATURE_MAGIC = b"DGFM"
FEATURE_VERSION = 1


def save_features(fm: FeatureMatrix, path) -> None:
    """Binary cache: magic, u16 version, u32 header length, JSON header, float64 payload."""
    header = json.dumps(
        {"kind": fm.kind, "rows": fm.frames.shape[0], "cols": fm.frames.shape[1],
         "duration_s": fm.duration_s, "config": fm.config.to_dict()},
        sort_keys=True,
    ).encode()
    payload = np.ascontiguousarray(fm.frames, dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC + struct.pack("<HI", FEATURE_VERSION, len(header)) + header + payload)


def load_features(path) -> FeatureMatrix:
    data = Path(path).read_bytes()
    if data[:4] != FEATURE_MAGIC:
        raise ValueError(f"{path}: not a feature file (magic {data[:4]!r})")
    version, hlen = struct.unpack_from("<HI", data, 4)
    if version != FEATURE_VERSION:
        raise ValueError(f"{path}: unsupported feature file version {version}")
    header = json.loads(data[10:10 + hlen])
    rows, cols = header["rows"], header["cols"]
    frames = np.frombuffer(data, dtype="<f8", count=rows * cols, offset=10 + hlen).reshape(rows, cols).copy()
    cfg = FeatureConfig.from_dict(header["config"])
    times = np.arange(rows) * cfg.hop_s
    return FeatureMatrix(frames, times, header["kind"], cfg, header["duration_s"])


def features_to_csv(fm: FeatureMatrix, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time_s"] + [f"{fm.kind}_{j}" for j in range(fm.frames.shape[1])])
        for t, row in zip(fm.frame_times, fm.frames):
            w.writerow([f"{t:.6f}"] + [repr(float(v)) for v in row])
