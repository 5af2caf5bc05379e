"""
CNN and BiLSTM detectors
========================

Train narrow versions of both architectures on a small synthetic corpus.
The full-width models use the same code path; they just take longer on a
laptop CPU. Early stopping keeps the best validation epoch.
"""

import tempfile
from pathlib import Path

from droneguard.augment import build_manifest, read_manifest
from droneguard.config import RunConfig
from droneguard.evaluation import evaluate_run
from droneguard.pipeline import train_nn
from droneguard.synth import write_corpus

cfg = RunConfig(
    cnn_conv_channels=(8, 8, 32, 32), cnn_dense_units=64,
    rnn_hidden_units=24, rnn_layers=2,
    train_window_stride_frames=8, max_epochs=15,
)
work = Path(tempfile.mkdtemp())


def corpus(name, n_bg, n_drones, seed):
    bg, ev = write_corpus(work / name, n_bg, n_drones, seed=seed, background_s=6.0, drone_s=2.0, prefix=name)
    pairs = [(b, e) for b in sorted(bg.iterdir()) for e in sorted(ev.iterdir())]
    return read_manifest(build_manifest(pairs, cfg.augment_spec(), work / name / "aug"))


train_rows = corpus("train", 4, 6, seed=1)
test_rows = corpus("test", 2, 2, seed=2)

for kind in ("cnn", "rnn"):
    detector, history = train_nn(kind, train_rows, cfg)
    print(f"{kind}: {len(history.epochs)} epochs, best epoch {history.best_epoch}, "
          f"best val accuracy {max(history.val_accuracy):.3f}")
    print(evaluate_run(detector, test_rows, repetitions=1).to_text())
