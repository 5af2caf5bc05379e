"""Peak-margin augmentation: drone sound overlaid on background beds.

Each augmented clip is the raw background followed by the same background
with the event repeated over its full length, the event scaled so that its
peak exceeds the background's peak by ``peak_margin`` (5% by default).
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .audio_io import AudioClip, read_wav, to_rate, write_wav

log = logging.getLogger(__name__)


class DegenerateInputError(ValueError):
    pass


class AugmentConfigError(ValueError):
    pass


@dataclass(frozen=True)
class AugmentSpec:
    peak_margin: float = 1.05
    label_positive: str = "positive"
    label_negative: str = "negative"
    rng_seed: int = 0
    # "peak" matches amplitude maxima; "rms" matches RMS levels instead
    level_mode: str = "peak"
    # start the tiled event at a seeded random offset instead of sample 0
    random_offset: bool = False

    def __post_init__(self):
        if not self.peak_margin > 1:
            raise AugmentConfigError(f"peak_margin must exceed 1, got {self.peak_margin}")
        if self.level_mode not in ("peak", "rms"):
            raise AugmentConfigError(f"level_mode must be 'peak' or 'rms', got {self.level_mode!r}")

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class LabeledClip:
    clip: AudioClip
    spans: tuple[tuple[float, float, str], ...]
    background_id: str
    event_id: str
    spec_hash: str
    event_gain: float = 1.0
    # factor applied to the whole clip when the mix exceeded full scale
    normalization: float = 1.0


def _level(x: np.ndarray, mode: str) -> float:
    if x.size == 0:
        return 0.0
    if mode == "rms":
        return float(np.sqrt(np.mean(x * x)))
    return float(np.max(np.abs(x)))


def margin_gain(event: AudioClip, background: AudioClip, margin: float = 1.05, mode: str = "peak") -> float:
    ev = _level(event.samples, mode)
    if ev == 0.0:
        raise DegenerateInputError(f"event clip {event.source_id!r} is silent")
    return margin * _level(background.samples, mode) / ev


def scale_to_margin(event: AudioClip, background: AudioClip, margin: float = 1.05,
                    mode: str = "peak") -> AudioClip:
    """Scale ``event`` so its level is ``margin`` times the background level.

    The result may exceed full scale; ``synthesize`` normalises the final mix.
    """
    gain = margin_gain(event, background, margin, mode)
    # skip the multiply when it is a no-op so identity cases stay bit-exact
    samples = event.samples if gain == 1.0 else event.samples * gain
    return AudioClip(samples, event.sample_rate, event.source_id)


def tile_event(event: AudioClip, target_len: int, offset: int = 0) -> AudioClip:
    """Repeat ``event`` end to end and truncate to ``target_len`` samples."""
    n = len(event)
    if n == 0:
        raise DegenerateInputError(f"event clip {event.source_id!r} is empty")
    idx = (np.arange(int(target_len)) + offset) % n
    return AudioClip(event.samples[idx], event.sample_rate, event.source_id)


def mix(background: AudioClip, event: AudioClip, spec: AugmentSpec) -> tuple[np.ndarray, float]:
    """Pre-normalisation mix and the event gain used."""
    if background.sample_rate != event.sample_rate:
        raise AugmentConfigError(
            f"sample rates differ: background {background.sample_rate} Hz, event {event.sample_rate} Hz"
        )
    gain = margin_gain(event, background, spec.peak_margin, spec.level_mode)
    scaled = scale_to_margin(event, background, spec.peak_margin, spec.level_mode)
    offset = 0
    if spec.random_offset:
        offset = int(np.random.default_rng(spec.rng_seed).integers(len(event)))
    tiled = tile_event(scaled, len(background), offset)
    out = np.concatenate([background.samples, background.samples + tiled.samples])
    return out, gain


def synthesize(background: AudioClip, event: AudioClip, spec: AugmentSpec = AugmentSpec()) -> LabeledClip:
    mixed, gain = mix(background, event, spec)
    peak = float(np.max(np.abs(mixed))) if mixed.size else 0.0
    norm = 1.0
    if peak > 1.0:
        norm = 1.0 / peak
        mixed = mixed * norm
    B = background.duration_seconds
    clip = AudioClip(mixed, background.sample_rate, f"{background.source_id}__{event.source_id}")
    spans = ((0.0, B, spec.label_negative), (B, 2 * B, spec.label_positive))
    return LabeledClip(clip, spans, background.source_id, event.source_id, spec.digest(), gain, norm)


def build_manifest(pairs, spec: AugmentSpec, out_dir, sample_rate: int = 24000,
                   config_hash: str | None = None) -> Path:
    """Synthesize every (background path, event path) pair into ``out_dir``.

    Writes one WAV per pair and ``manifest.jsonl`` with one JSON row per pair,
    in input order. Failed pairs become error rows. Paths in the manifest are
    relative to ``out_dir``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for bg_path, ev_path in pairs:
        bg_id, ev_id = Path(bg_path).stem, Path(ev_path).stem
        name = f"{bg_id}__{ev_id}.wav"
        try:
            bg = to_rate(read_wav(bg_path), sample_rate)
            ev = to_rate(read_wav(ev_path), sample_rate)
            lc = synthesize(bg, ev, spec)
            write_wav(lc.clip, out_dir / name)
            row = {
                "path": name,
                "sample_rate": sample_rate,
                "duration_s": lc.clip.duration_seconds,
                "spans": [list(s) for s in lc.spans],
                "background_id": bg_id,
                "event_id": ev_id,
                "spec_hash": lc.spec_hash,
                "seed": spec.rng_seed,
                "tool_version": __version__,
                "status": "ok",
            }
        except (OSError, ValueError) as exc:
            log.warning("pair %s + %s failed: %s", bg_id, ev_id, exc)
            row = {
                "path": None,
                "background_id": bg_id,
                "event_id": ev_id,
                "seed": spec.rng_seed,
                "tool_version": __version__,
                "status": "error",
                "error": f"{type(exc).__name__}: {exc}",
            }
        if config_hash:
            row["config_hash"] = config_hash
        rows.append(row)
    manifest = out_dir / "manifest.jsonl"
    with open(manifest, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    return manifest


def read_manifest(path) -> list[dict]:
    """Rows of a manifest, with ``path`` resolved against the manifest's directory."""
    path = Path(path)
    rows = []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            if row.get("path"):
                row["path"] = str((path.parent / row["path"]).resolve())
            rows.append(row)
    return rows
