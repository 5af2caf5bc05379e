"""Trained neural model + input normalisation + timeline prediction + model files."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..container import read_container, write_container
from ..features import FeatureMatrix, nn_windows
from ..timeline import DetectionTimeline
from .models import Model, build_model

NN_MAGIC = b"DGNN"
NN_VERSION = 1


@dataclass(eq=False)
class NeuralDetector:
    model: Model
    # per-mel-bin standardisation fitted on the training windows
    norm_mean: np.ndarray
    norm_std: np.ndarray
    feature_config: dict | None = None
    train_config: dict = field(default_factory=dict)
    best_epoch: int = 0
    inference_dtype: str = "float32"

    @property
    def kind(self) -> str:
        return self.model.kind

    def normalise(self, windows: np.ndarray) -> np.ndarray:
        return (windows - self.norm_mean) / self.norm_std

    def window_probabilities(self, windows: np.ndarray) -> np.ndarray:
        """Positive-class probability for each (12, 40) window."""
        if len(windows) == 0:
            return np.zeros(0)
        probs = self.model.predict_proba(self.normalise(windows), dtype=np.dtype(self.inference_dtype))
        return probs[:, 1]


def fit_normaliser(windows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    flat = windows.reshape(-1, windows.shape[-1])
    mean = flat.mean(axis=0)
    std = flat.std(axis=0)
    return mean, np.where(std > 1e-8, std, 1.0)


def timeline_from_window_probs(probs: np.ndarray, centers: np.ndarray, hop_s: float,
                               duration_s: float) -> DetectionTimeline:
    """Each instant takes the label of the window whose center is nearest."""
    if len(probs) == 0:
        return DetectionTimeline.empty(hop_s, duration_s)
    labels = (probs > 0.5).astype(int)  # argmax over two classes; ties go to class 0
    boundaries = (centers[:-1] + centers[1:]) / 2
    return DetectionTimeline.from_cells(boundaries, labels, probs, hop_s, duration_s)


def predict_timeline(detector: NeuralDetector, features: FeatureMatrix) -> DetectionTimeline:
    if features.kind != "log_mel":
        raise ValueError(f"neural detectors need log_mel features, got {features.kind}")
    windows, centers = nn_windows(features)
    probs = detector.window_probabilities(windows)
    return timeline_from_window_probs(probs, centers, features.hop_s, features.duration_s)


def save_detector(det: NeuralDetector, path, extra_header: dict | None = None) -> None:
    header = {
        "model": det.kind,
        "architecture": det.model.arch.to_dict(),
        "feature_config": det.feature_config,
        "train_config": det.train_config,
        "best_epoch": det.best_epoch,
        "inference_dtype": det.inference_dtype,
        **(extra_header or {}),
    }
    arrays = {"norm.mean": det.norm_mean, "norm.std": det.norm_std, **det.model.state_dict()}
    write_container(path, NN_MAGIC, NN_VERSION, header, arrays)


def load_detector(path) -> tuple[NeuralDetector, dict]:
    _, header, arrays = read_container(path, NN_MAGIC, (NN_VERSION,))
    model = build_model(header["model"], header["architecture"])
    mean = arrays.pop("norm.mean")
    std = arrays.pop("norm.std")
    model.load_state_dict(arrays)
    det = NeuralDetector(model, mean, std, header.get("feature_config"), header.get("train_config", {}),
                         header.get("best_epoch", 0), header.get("inference_dtype", "float32"))
    return det, header
