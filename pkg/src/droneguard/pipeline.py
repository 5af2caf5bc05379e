"""Glue between manifests, features and the three detector families.

Everything the CLI and the demos do end-to-end lives here: loading a
manifest's clips with their features, carving a by-clip validation split,
training GMM/CNN/RNN detectors, loading any saved model by its magic bytes
and running detection on a clip.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from pathlib import Path

import numpy as np

from . import gmm
from .audio_io import AudioClip, read_wav, to_rate
from .config import RunConfig
from .container import peek_magic
from .features import FeatureConfig, FeatureMatrix, compute_log_mel, compute_mfcc, compute_power, nn_windows
from .neural import detector as nn_detector
from .neural.models import build_model
from .neural.train import Dataset, History, train
from .timeline import DetectionTimeline, _span_index

log = logging.getLogger(__name__)

MODEL_KINDS = ("gmm", "cnn", "rnn")


class ModelFormatError(ValueError):
    pass


@dataclass
class ClipData:
    path: str
    clip: AudioClip
    spans: list
    mfcc: FeatureMatrix
    log_mel: FeatureMatrix


def clip_features(clip: AudioClip, fcfg: FeatureConfig) -> tuple[FeatureMatrix, FeatureMatrix]:
    """MFCC and log-mel matrices from one shared power spectrogram."""
    clip = to_rate(clip, fcfg.sample_rate)
    power = compute_power(clip, fcfg)
    return compute_mfcc(clip, fcfg, power), compute_log_mel(clip, fcfg, power)


def load_clips(rows, fcfg: FeatureConfig) -> list[ClipData]:
    out = []
    for row in rows:
        if row.get("status", "ok") != "ok":
            continue
        clip = to_rate(read_wav(row["path"]), fcfg.sample_rate)
        mf, lm = clip_features(clip, fcfg)
        out.append(ClipData(row["path"], clip, row["spans"], mf, lm))
    return out


def labels_at(spans, times: np.ndarray, positive_label: str, duration_s: float) -> np.ndarray:
    """Binary label of the manifest span containing each time (ties go later)."""
    truth = DetectionTimeline.from_label_spans(spans, positive_label, 0.02, duration_s)
    if truth.is_empty or len(times) == 0:
        return np.zeros(len(times), dtype=int)
    labels = np.array([s.label for s in truth.spans])
    return labels[_span_index(truth, np.asarray(times))]


def frame_centers(fm: FeatureMatrix) -> np.ndarray:
    cfg = fm.config
    half = cfg.frame.window_samples(cfg.sample_rate) / (2 * cfg.sample_rate)
    return fm.frame_times + half


def split_by_clip(rows, val_split: float, seed: int) -> tuple[list, list]:
    """Shuffle whole clips into (train, validation); never splits a clip."""
    rows = [r for r in rows if r.get("status", "ok") == "ok"]
    if len(rows) < 2:
        raise ValueError(f"need at least 2 clips to carve a validation split, got {len(rows)}")
    order = np.random.default_rng(seed).permutation(len(rows))
    n_val = min(len(rows) - 1, max(1, int(round(val_split * len(rows)))))
    val = [rows[i] for i in sorted(order[:n_val])]
    tr = [rows[i] for i in sorted(order[n_val:])]
    return tr, val


# --- detectors behind one interface ---------------------------------------

@dataclass(eq=False)
class Detector:
    """A trained model of any kind plus the feature settings it expects."""

    kind: str
    model: object  # gmm.GmmDetector or NeuralDetector
    feature_config: FeatureConfig
    header: dict = field(default_factory=dict)
    # inference never samples dropout, so every model kind is deterministic
    deterministic: bool = True

    @property
    def frame_hop_s(self) -> float:
        return self.feature_config.hop_s

    @property
    def config_hash(self) -> str | None:
        return self.header.get("config_hash")

    def predict_from_features(self, mfcc_fm: FeatureMatrix | None, mel_fm: FeatureMatrix | None) -> DetectionTimeline:
        if self.kind == "gmm":
            return gmm.classify(self.model, mfcc_fm)
        return nn_detector.predict_timeline(self.model, mel_fm)

    def predict(self, clip: AudioClip, seed: int = 0) -> DetectionTimeline:
        clip = to_rate(clip, self.feature_config.sample_rate)
        power = compute_power(clip, self.feature_config)
        if self.kind == "gmm":
            return self.predict_from_features(compute_mfcc(clip, self.feature_config, power), None)
        return self.predict_from_features(None, compute_log_mel(clip, self.feature_config, power))


def _header(cfg: RunConfig) -> dict:
    return {"config_hash": cfg.config_hash(), "run_config": cfg.to_dict()}


def train_gmm(rows, cfg: RunConfig, clips: list[ClipData] | None = None) -> Detector:
    fcfg = cfg.feature_config()
    tr_rows, val_rows = split_by_clip(rows, cfg.val_split, cfg.seed)
    if clips is None:
        clips = load_clips(tr_rows + val_rows, fcfg)
    by_path = {c.path: c for c in clips}
    pos, neg = [], []
    for row in tr_rows:
        c = by_path[row["path"]]
        lab = labels_at(c.spans, frame_centers(c.mfcc), cfg.positive_label, c.clip.duration_seconds)
        pos.append(c.mfcc.frames[lab == 1])
        neg.append(c.mfcc.frames[lab == 0])
    pos, neg = np.concatenate(pos), np.concatenate(neg)
    log.info("fitting GMMs on %d positive / %d negative frames", len(pos), len(neg))
    det = gmm.train_detector(pos, neg, cfg.gmm_components, cfg.seed, cfg.gmm_theta, cfg.gmm_smoothing_frames,
                             restarts=cfg.gmm_restarts, max_iter=cfg.gmm_max_iter, tol=cfg.gmm_tol)
    det.aggregation_frames = cfg.gmm_aggregation_frames
    det.feature_config = fcfg.to_dict()
    if cfg.gmm_calibrate_theta:
        frames, truths = [], []
        for row in val_rows:
            c = by_path[row["path"]]
            frames.append(c.mfcc.frames)
            truths.append(labels_at(c.spans, frame_centers(c.mfcc), cfg.positive_label, c.clip.duration_seconds))
        det.theta = gmm.calibrate_threshold(det, frames, truths)
        log.info("calibrated theta = %.4f", det.theta)
    return Detector("gmm", det, fcfg, _header(cfg))


def window_dataset(clips: list[ClipData], positive_label: str, stride: int, group_offset: int = 0) -> Dataset:
    xs, ys, gs = [], [], []
    for i, c in enumerate(clips):
        windows, centers = nn_windows(c.log_mel)
        windows, centers = windows[::stride], centers[::stride]
        xs.append(windows)
        ys.append(labels_at(c.spans, centers, positive_label, c.clip.duration_seconds))
        gs.append(np.full(len(windows), group_offset + i))
    return Dataset(np.concatenate(xs), np.concatenate(ys), np.concatenate(gs))


def train_nn(kind: str, rows, cfg: RunConfig, clips: list[ClipData] | None = None) -> tuple[Detector, History]:
    if kind not in ("cnn", "rnn"):
        raise ValueError(f"unknown neural model kind {kind!r}")
    fcfg = cfg.feature_config()
    tr_rows, val_rows = split_by_clip(rows, cfg.val_split, cfg.seed)
    if clips is None:
        clips = load_clips(tr_rows + val_rows, fcfg)
    by_path = {c.path: c for c in clips}
    tr_clips = [by_path[r["path"]] for r in tr_rows]
    val_clips = [by_path[r["path"]] for r in val_rows]
    stride = cfg.train_window_stride_frames
    tr_set = window_dataset(tr_clips, cfg.positive_label, stride)
    val_set = window_dataset(val_clips, cfg.positive_label, stride, group_offset=len(tr_clips))
    mean, std = nn_detector.fit_normaliser(tr_set.x)
    tr_set = Dataset((tr_set.x - mean) / std, tr_set.y, tr_set.groups)
    val_set = Dataset((val_set.x - mean) / std, val_set.y, val_set.groups)
    arch = cfg.cnn_architecture() if kind == "cnn" else cfg.rnn_architecture()
    model = build_model(kind, arch.to_dict(), cfg.seed)
    tcfg = cfg.train_config(kind)
    log.info("training %s on %d windows, validating on %d", kind, len(tr_set), len(val_set))
    model, history = train(model, tr_set, val_set, tcfg)
    det = nn_detector.NeuralDetector(model, mean, std, fcfg.to_dict(), tcfg.to_dict(), history.best_epoch)
    return Detector(kind, det, fcfg, _header(cfg)), history


def save_model(det: Detector, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    if det.kind == "gmm":
        gmm.save_detector(det.model, path, det.header)
    else:
        nn_detector.save_detector(det.model, path, det.header)


def load_model(path) -> Detector:
    magic = peek_magic(path)
    if magic == gmm.GMM_MAGIC:
        model, header = gmm.load_detector(path)
        kind = "gmm"
    elif magic == nn_detector.NN_MAGIC:
        model, header = nn_detector.load_detector(path)
        kind = header["model"]
    else:
        raise ModelFormatError(f"{path}: not a model file (magic {magic!r})")
    fcfg = FeatureConfig.from_dict(header["feature_config"]) if header.get("feature_config") else FeatureConfig()
    extra = {k: header[k] for k in ("config_hash", "run_config") if k in header}
    return Detector(kind, model, fcfg, extra)


def detect(det: Detector, clip: AudioClip) -> DetectionTimeline:
    return det.predict(clip)
