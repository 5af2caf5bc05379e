"""
Latency on a one-minute clip
============================

Time WAV decoding, feature engineering and each detector's prediction on
60 s of audio. Prediction time does not depend on the weight values, so
untrained full-size models are enough here.
"""

import tempfile
from pathlib import Path

import numpy as np

from droneguard.audio_io import AudioClip, write_wav
from droneguard.config import RunConfig
from droneguard.evaluation import benchmark
from droneguard.gmm import train_detector
from droneguard.neural.detector import NeuralDetector
from droneguard.neural.models import build_model
from droneguard.pipeline import Detector
from droneguard.synth import noise_background

rng = np.random.default_rng(0)
cfg = RunConfig()
fcfg = cfg.feature_config()
clip_path = Path(tempfile.mkdtemp()) / "minute.wav"
write_wav(AudioClip(noise_background(60.0, rng), 24000), clip_path)

frames = rng.standard_normal((500, 20))
detectors = {"gmm": Detector("gmm", train_detector(frames + 1, frames - 1, 13, seed=0, restarts=1), fcfg)}
for kind, arch in (("cnn", cfg.cnn_architecture()), ("rnn", cfg.rnn_architecture())):
    model = build_model(kind, arch.to_dict(), seed=0)
    detectors[kind] = Detector(kind, NeuralDetector(model, np.zeros(40), np.ones(40)), fcfg)

report = benchmark(clip_path, detectors, repetitions=5)
print(report.to_text())
for name, seconds in report.feature_plus_prediction().items():
    print(f"features + {name}: {seconds:.3f} s")
print("real time capable:", report.real_time)
