"""Mono PCM audio: WAV decode/encode, resampling and slicing.

Only RIFF/WAVE is supported. Reading accepts 16-bit integer PCM and 32-bit
IEEE float, mono or stereo (stereo is averaged to mono). Writing always
emits 16-bit PCM mono.

Resampling uses a polyphase FIR (``scipy.signal.resample_poly``, Kaiser
window anti-aliasing filter), so content above the target Nyquist is removed.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field
from math import gcd
from pathlib import Path

import numpy as np
from scipy.signal import resample_poly

DEFAULT_SAMPLE_RATE = 24000

WAVE_FORMAT_PCM = 0x0001
WAVE_FORMAT_IEEE_FLOAT = 0x0003
WAVE_FORMAT_EXTENSIBLE = 0xFFFE

SUPPORTED_CODECS = ("PCM 16-bit", "IEEE float 32-bit")

# Largest positive value a 16-bit sample can hold after scaling by 1/32768.
PCM16_MAX = 32767 / 32768


class WavDecodeError(ValueError):
    """Malformed RIFF/WAVE data."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class UnsupportedFormatError(ValueError):
    """A well-formed WAV file using a codec this module cannot decode."""

    def __init__(self, detail: str):
        super().__init__(
            f"unsupported WAV format: {detail}; supported codecs: "
            + ", ".join(SUPPORTED_CODECS)
            + " (1 or 2 channels)"
        )


class ClipRangeError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class AudioClip:
    """Immutable mono clip with amplitudes in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int
    source_id: str = ""
    n_clipped: int = field(default=0)

    def __post_init__(self):
        if int(self.sample_rate) <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError(f"samples must be 1-D, got shape {samples.shape}")
        samples = samples.copy()
        samples.flags.writeable = False
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration_seconds(self) -> float:
        return len(self) / self.sample_rate

    def slice(self, start_s: float, end_s: float) -> "AudioClip":
        a = max(0, int(round(start_s * self.sample_rate)))
        b = min(len(self), int(round(end_s * self.sample_rate)))
        return AudioClip(self.samples[a:max(a, b)], self.sample_rate, self.source_id)


def _parse_fmt(body: bytes, offset: int) -> tuple[int, int, int, int]:
    if len(body) < 16:
        raise WavDecodeError("fmt chunk shorter than 16 bytes", offset)
    tag, channels, rate, _, block_align, bits = struct.unpack_from("<HHIIHH", body)
    if tag == WAVE_FORMAT_EXTENSIBLE:
        if len(body) < 40:
            raise WavDecodeError("WAVE_FORMAT_EXTENSIBLE fmt chunk shorter than 40 bytes", offset)
        # first two bytes of the subformat GUID carry the real format tag
        (tag,) = struct.unpack_from("<H", body, 24)
    return tag, channels, rate, bits


def read_wav(path) -> AudioClip:
    """Decode a WAV file into a mono clip.

    Integer samples are scaled by 1/32768. Float samples outside [-1, 1]
    are clipped; the count is stored on the clip and reported as a warning.
    """
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 12:
        raise WavDecodeError("file too short for a RIFF header", 0)
    riff, _, wave = struct.unpack_from("<4sI4s", data, 0)
    if riff != b"RIFF":
        raise WavDecodeError(f"expected 'RIFF' magic, found {riff!r}", 0)
    if wave != b"WAVE":
        raise WavDecodeError(f"expected 'WAVE' form type, found {wave!r}", 8)

    fmt = None
    payload = None
    pos = 12
    while pos + 8 <= len(data):
        cid, size = struct.unpack_from("<4sI", data, pos)
        body_start = pos + 8
        if cid == b"fmt ":
            if body_start + size > len(data):
                raise WavDecodeError("fmt chunk runs past end of file", pos)
            fmt = _parse_fmt(data[body_start:body_start + size], pos)
        elif cid == b"data":
            if fmt is None:
                raise WavDecodeError("data chunk precedes fmt chunk", pos)
            # tolerate truncated files: keep what is there
            payload = data[body_start:min(len(data), body_start + size)]
            break
        pos = body_start + size + (size & 1)
    if fmt is None:
        raise WavDecodeError("no fmt chunk found", pos)
    if payload is None:
        raise WavDecodeError("no data chunk found", pos)

    tag, channels, rate, bits = fmt
    if channels not in (1, 2):
        raise UnsupportedFormatError(f"{channels} channels")
    if rate <= 0:
        raise WavDecodeError("sample rate is zero", 24)
    if tag == WAVE_FORMAT_PCM and bits == 16:
        dtype = np.dtype("<i2")
    elif tag == WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        dtype = np.dtype("<f4")
    else:
        raise UnsupportedFormatError(f"format tag 0x{tag:04x} with {bits} bits per sample")

    frame_bytes = dtype.itemsize * channels
    n_frames = len(payload) // frame_bytes
    raw = np.frombuffer(payload[: n_frames * frame_bytes], dtype=dtype)
    raw = raw.reshape(n_frames, channels).astype(np.float64)
    if dtype.kind == "i":
        raw /= 32768.0
    samples = raw.mean(axis=1) if channels == 2 else raw[:, 0]

    n_clipped = 0
    if dtype.kind == "f":
        over = np.abs(samples) > 1.0
        n_clipped = int(np.count_nonzero(over))
        if n_clipped:
            warnings.warn(f"{path.name}: {n_clipped} samples outside [-1, 1] were clipped", stacklevel=2)
            samples = np.clip(samples, -1.0, 1.0)
    return AudioClip(samples, rate, source_id=path.stem, n_clipped=n_clipped)


def write_wav(clip: AudioClip, path) -> None:
    """Encode ``clip`` as 16-bit PCM mono.

    Samples must lie in [-1, 1]; anything above 32767/32768 saturates to the
    largest positive code.
    """
    x = clip.samples
    if x.size and (not np.all(np.isfinite(x)) or np.max(np.abs(x)) > 1.0):
        bad = int(np.count_nonzero(~(np.abs(x) <= 1.0)))
        raise ClipRangeError(f"{bad} samples outside [-1, 1]; peak-limit before writing")
    codes = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
    payload = codes.tobytes()
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(payload), b"WAVE",
        b"fmt ", 16, WAVE_FORMAT_PCM, 1, clip.sample_rate, clip.sample_rate * 2, 2, 16,
        b"data", len(payload),
    )
    Path(path).write_bytes(header + payload)


def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    target_rate = int(target_rate)
    if target_rate == clip.sample_rate:
        return clip
    g = gcd(target_rate, clip.sample_rate)
    up, down = target_rate // g, clip.sample_rate // g
    if len(clip) == 0:
        return AudioClip(np.zeros(0), target_rate, clip.source_id)
    y = resample_poly(clip.samples, up, down)
    # the FIR can overshoot slightly near full scale
    return AudioClip(np.clip(y, -1.0, 1.0), target_rate, clip.source_id)


def to_rate(clip: AudioClip, rate: int = DEFAULT_SAMPLE_RATE) -> AudioClip:
    return clip if clip.sample_rate == rate else resample(clip, rate)
