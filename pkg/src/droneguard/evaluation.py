"""Frame-level detection metrics, manifest evaluation and the latency benchmark.

Predictions and ground truth are both sampled on a 20 ms grid (frame j is
centred at (j + 0.5) * hop) regardless of the model's own window length, so
GMM and neural scores are directly comparable.
"""

from __future__ import annotations

import json
import logging
import os
import platform
import statistics
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .timeline import DetectionTimeline, frame_labels

log = logging.getLogger(__name__)

# output ordering puts accuracy last on purpose
METRIC_KEYS = ("precision", "recall", "f_score", "accuracy")


class LengthMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class MetricsReport:
    tp: int
    fp: int
    tn: int
    fn: int
    precision: float
    recall: float
    f_score: float
    accuracy: float
    degenerate: tuple = ()

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in METRIC_KEYS}
        d.update(tp=self.tp, fp=self.fp, tn=self.tn, fn=self.fn, degenerate=list(self.degenerate))
        return d


def f_score(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def f_score_counts(tp: int, fp: int, fn: int) -> float:
    """F-score straight from counts (2tp / (2tp + fp + fn))."""
    denom = 2 * tp + fp + fn
    return 2.0 * tp / denom if denom else 0.0


def metrics_from_counts(tp: int, fp: int, tn: int, fn: int) -> MetricsReport:
    degenerate = []
    if tp + fp:
        precision = tp / (tp + fp)
    else:
        precision = 0.0
        degenerate.append("precision")
    if tp + fn:
        recall = tp / (tp + fn)
    else:
        recall = 0.0
        degenerate.append("recall")
    if precision + recall:
        f = f_score(precision, recall)
    else:
        f = 0.0
        degenerate.append("f_score")
    total = tp + fp + tn + fn
    if total:
        acc = (tp + tn) / total
    else:
        acc = 0.0
        degenerate.append("accuracy")
    return MetricsReport(tp, fp, tn, fn, precision, recall, f, acc, tuple(degenerate))


def confusion(pred, truth) -> tuple[int, int, int, int]:
    pred = np.asarray(pred).astype(bool)
    truth = np.asarray(truth).astype(bool)
    if pred.shape != truth.shape:
        raise LengthMismatchError(f"prediction has {pred.shape} frames, truth has {truth.shape}")
    tp = int(np.count_nonzero(pred & truth))
    fp = int(np.count_nonzero(pred & ~truth))
    fn = int(np.count_nonzero(~pred & truth))
    tn = int(pred.size - tp - fp - fn)
    return tp, fp, tn, fn


def compute_metrics(pred, truth) -> MetricsReport:
    return metrics_from_counts(*confusion(pred, truth))


# --- manifest evaluation ---------------------------------------------------

@dataclass
class ClipResult:
    path: str
    metrics: MetricsReport


@dataclass
class EvaluationResult:
    mean: dict
    std: dict
    pooled: MetricsReport
    per_clip: list = field(default_factory=list)
    skipped: list = field(default_factory=list)
    repetitions: int = 1
    frame_hop_s: float = 0.02
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "metrics": {k: self.mean[k] for k in METRIC_KEYS},
            "std": {k: self.std[k] for k in METRIC_KEYS},
            "counts": {k: getattr(self.pooled, k) for k in ("tp", "fp", "tn", "fn")},
            "repetitions": self.repetitions,
            "frame_hop_s": self.frame_hop_s,
            "granularity": f"frame-level on a {self.frame_hop_s * 1000:g} ms grid, micro-averaged over clips",
            "per_clip": [{"path": c.path, **c.metrics.to_dict()} for c in self.per_clip],
            "skipped": self.skipped,
            **self.meta,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        rows = [("metric", "mean", "std")]
        rows += [(k, f"{self.mean[k]:.4f}", f"{self.std[k]:.4f}") for k in METRIC_KEYS]
        return _table(rows)


def _table(rows) -> str:
    widths = [max(len(str(r[i])) for r in rows) for i in range(len(rows[0]))]
    return "\n".join("  ".join(str(c).ljust(w) for c, w in zip(r, widths)) for r in rows) + "\n"


def evaluate_run(detector, rows, repetitions: int = 10, positive_label: str = "positive",
                 seed: int = 0, meta: dict | None = None) -> EvaluationResult:
    """Score ``detector`` on manifest ``rows``.

    ``detector`` must provide ``predict(clip, seed) -> DetectionTimeline``,
    a ``frame_hop_s`` and a ``deterministic`` flag. Deterministic detectors
    are run once and the result counted for every repetition.
    """
    from .audio_io import read_wav

    hop = detector.frame_hop_s
    clips = []
    skipped = []
    for row in rows:
        if row.get("status", "ok") != "ok" or not row.get("path"):
            skipped.append({"path": row.get("path"), "reason": row.get("error", "error row in manifest")})
            continue
        try:
            clip = read_wav(row["path"])
        except (OSError, ValueError) as exc:
            log.warning("skipping %s: %s", row["path"], exc)
            skipped.append({"path": row["path"], "reason": f"{type(exc).__name__}: {exc}"})
            continue
        duration = clip.duration_seconds
        truth = DetectionTimeline.from_label_spans(row["spans"], positive_label, hop, duration)
        clips.append((row["path"], clip, frame_labels(truth, hop, duration)))

    runs = 1 if detector.deterministic else repetitions
    per_rep = []
    per_clip = []
    for rep in range(runs):
        pooled = np.zeros(4, dtype=int)
        for path, clip, truth in clips:
            timeline = detector.predict(clip, seed + rep)
            if timeline.is_empty:
                pred = np.zeros_like(truth)
            else:
                pred = frame_labels(timeline, hop, clip.duration_seconds)
            counts = confusion(pred, truth)
            pooled += counts
            if rep == 0:
                per_clip.append(ClipResult(os.path.basename(path), metrics_from_counts(*counts)))
        per_rep.append(metrics_from_counts(*pooled.tolist()))
    if runs == 1:
        per_rep = per_rep * repetitions
    # statistics works in exact arithmetic, so identical repetitions give std exactly 0
    mean = {k: statistics.fmean(getattr(m, k) for m in per_rep) for k in METRIC_KEYS}
    std = {k: statistics.pstdev(getattr(m, k) for m in per_rep) for k in METRIC_KEYS}
    return EvaluationResult(mean, std, per_rep[0], per_clip, skipped, repetitions, hop, dict(meta or {}))


# --- latency benchmark -----------------------------------------------------

@dataclass
class TimingReport:
    stages: dict  # stage name -> median seconds
    clip_length_s: float
    repetitions: int
    machine: dict
    samples: dict = field(default_factory=dict)

    @property
    def total_s(self) -> float:
        return float(sum(self.stages.values()))

    @property
    def real_time(self) -> bool:
        return self.total_s < self.clip_length_s

    def feature_plus_prediction(self) -> dict:
        feat = self.stages.get("feature_engineering", 0.0)
        return {k[len("prediction_"):]: feat + v for k, v in self.stages.items() if k.startswith("prediction_")}

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(total_s=self.total_s, real_time=self.real_time,
                 feature_plus_prediction_s=self.feature_plus_prediction())
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        rows = [("stage", "seconds")] + [(k, f"{v:.4f}") for k, v in self.stages.items()]
        rows.append(("total", f"{self.total_s:.4f}"))
        return _table(rows)


def machine_descriptor() -> dict:
    return {
        "platform": platform.platform(),
        "processor": platform.processor() or platform.machine(),
        "cpu_count": os.cpu_count(),
        "python": platform.python_version(),
        "numpy": np.__version__,
    }


def time_stage(fn, repetitions: int = 5) -> tuple[float, list[float], object]:
    """Median wall-clock seconds of ``fn()`` over ``repetitions`` calls."""
    samples = []
    result = None
    for _ in range(max(1, repetitions)):
        t0 = time.perf_counter()
        result = fn()
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples), samples, result


def benchmark(clip_path, detectors: dict, repetitions: int = 5, require_minute: bool = True) -> TimingReport:
    """Time WAV decode, feature engineering and each detector's prediction.

    ``detectors`` maps a name to an object exposing ``feature_config``,
    ``kind`` and ``predict_from_features(mfcc, log_mel)``. Each stage is
    timed around its own call only.
    """
    from .audio_io import read_wav, to_rate
    from .features import compute_log_mel, compute_mfcc, compute_power

    if repetitions < 5:
        raise ValueError("benchmark needs at least 5 repetitions per stage")
    stages, samples = {}, {}
    med, s, clip = time_stage(lambda: read_wav(clip_path), repetitions)
    stages["data_read"], samples["data_read"] = med, s
    if require_minute and abs(clip.duration_seconds - 60.0) > 1.0 / clip.sample_rate:
        raise ValueError(f"benchmark clip must last 60 s, got {clip.duration_seconds:.3f} s")

    feature_cfgs = {}
    for name, det in detectors.items():
        feature_cfgs.setdefault(json.dumps(det.feature_config.to_dict(), sort_keys=True), det.feature_config)
    if not feature_cfgs:
        from .features import FeatureConfig
        feature_cfgs["default"] = FeatureConfig()
    if len(feature_cfgs) > 1:
        log.warning("detectors use %d different feature configs; timing the first", len(feature_cfgs))
    fcfg = next(iter(feature_cfgs.values()))
    clip = to_rate(clip, fcfg.sample_rate)

    def features():
        power = compute_power(clip, fcfg)
        return compute_mfcc(clip, fcfg, power), compute_log_mel(clip, fcfg, power)

    med, s, (mfcc_fm, mel_fm) = time_stage(features, repetitions)
    stages["feature_engineering"], samples["feature_engineering"] = med, s
    for name, det in detectors.items():
        med, s, _ = time_stage(lambda: det.predict_from_features(mfcc_fm, mel_fm), repetitions)
        stages[f"prediction_{name}"], samples[f"prediction_{name}"] = med, s
    return TimingReport(stages, clip.duration_seconds, repetitions, machine_descriptor(), samples)
