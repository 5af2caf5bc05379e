"""Run configuration: one flat set of validated fields, loadable from a
``key = value`` text file whose keys carry their units (``window_ms``,
``f_max_hz``...), with per-key overrides from the command line.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import asdict, dataclass, fields

from .augment import AugmentSpec
from .features import FeatureConfig, FrameSpec, MelConfig
from .neural.models import CnnArchitecture, RnnArchitecture
from .neural.train import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    sample_rate_hz: int = 24000
    # framing and features
    window_ms: float = 40.0
    hop_ms: float = 20.0
    window_fn: str = "hann"
    n_mels: int = 40
    f_min_hz: float = 0.0
    f_max_hz: float = 1500.0
    n_fft: int = 2048
    log_floor: float = 1e-10
    n_mfcc: int = 20
    mfcc_full_band: bool = False
    nn_frames_per_window: int = 12
    # augmentation
    peak_margin: float = 1.05
    level_mode: str = "peak"
    positive_label: str = "positive"
    negative_label: str = "negative"
    # GMM detector
    gmm_components: int = 13
    gmm_theta: float = 0.0
    gmm_calibrate_theta: bool = False
    gmm_smoothing_frames: int = 5
    gmm_aggregation_frames: int = 1
    gmm_restarts: int = 10
    gmm_max_iter: int = 200
    gmm_tol: float = 1e-4
    # neural detectors
    cnn_learning_rate: float = 0.001
    cnn_batch_size: int = 128
    cnn_conv_channels: tuple = (32, 32, 256, 256)
    cnn_dense_units: int = 1024
    cnn_dropout: float = 0.5
    rnn_learning_rate: float = 0.0005
    rnn_batch_size: int = 64
    rnn_hidden_units: int = 300
    rnn_layers: int = 3
    rnn_pooling: str = "final"
    patience_epochs: int = 3
    max_epochs: int = 50
    optimizer: str = "adam"
    # keep every n-th window when building neural training sets
    train_window_stride_frames: int = 1
    val_split: float = 0.2
    seed: int = 0

    def __post_init__(self):
        try:
            self.validate()
        except ConfigError:
            raise
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc

    def validate(self) -> None:
        if self.sample_rate_hz <= 0:
            raise ConfigError("sample_rate_hz must be positive")
        if not 0.0 < self.val_split < 1.0:
            raise ConfigError("val_split must be in (0, 1)")
        if self.train_window_stride_frames < 1:
            raise ConfigError("train_window_stride_frames must be >= 1")
        if self.gmm_components < 1:
            raise ConfigError("gmm_components must be >= 1")
        if self.gmm_smoothing_frames < 1 or self.gmm_smoothing_frames % 2 == 0:
            raise ConfigError("gmm_smoothing_frames must be odd and >= 1")
        if not 0.0 <= self.cnn_dropout < 1.0:
            raise ConfigError("cnn_dropout must be in [0, 1)")
        # building the derived configs runs their own checks
        self.feature_config()
        self.augment_spec()
        self.cnn_architecture()
        self.rnn_architecture()
        self.train_config("cnn")
        self.train_config("rnn")

    def feature_config(self) -> FeatureConfig:
        return FeatureConfig(
            sample_rate=self.sample_rate_hz,
            frame=FrameSpec(self.window_ms, self.hop_ms, self.window_fn),
            mel=MelConfig(self.n_mels, self.f_min_hz, self.f_max_hz, self.n_fft, self.log_floor),
            n_mfcc=self.n_mfcc,
            frames_per_window=self.nn_frames_per_window,
            mfcc_full_band=self.mfcc_full_band,
        )

    def augment_spec(self) -> AugmentSpec:
        return AugmentSpec(self.peak_margin, self.positive_label, self.negative_label, self.seed, self.level_mode)

    def cnn_architecture(self) -> CnnArchitecture:
        return CnnArchitecture(
            input_shape=(self.nn_frames_per_window, self.n_mels),
            conv_channels=tuple(self.cnn_conv_channels),
            dense_units=self.cnn_dense_units,
            dropout=self.cnn_dropout,
        )

    def rnn_architecture(self) -> RnnArchitecture:
        return RnnArchitecture(
            input_dim=self.n_mels,
            steps=self.nn_frames_per_window,
            hidden=self.rnn_hidden_units,
            layers=self.rnn_layers,
            pooling=self.rnn_pooling,
        )

    def train_config(self, kind: str) -> TrainConfig:
        lr, bs = {"cnn": (self.cnn_learning_rate, self.cnn_batch_size),
                  "rnn": (self.rnn_learning_rate, self.rnn_batch_size)}[kind]
        return TrainConfig(lr, bs, self.patience_epochs, self.max_epochs, self.seed, self.optimizer)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cnn_conv_channels"] = list(self.cnn_conv_channels)
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def with_overrides(self, overrides: dict) -> "RunConfig":
        return dataclasses.replace(self, **_coerce_all(overrides))


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _coerce(key: str, raw):
    if key not in _FIELDS:
        raise ConfigError(f"unknown config key {key!r}")
    default = _FIELDS[key].default
    if not isinstance(raw, str):
        return tuple(raw) if isinstance(default, tuple) else raw
    text = raw.strip()
    try:
        if isinstance(default, bool):
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(int(p) for p in text.split(",") if p.strip())
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r} (expected {type(default).__name__})") from None
    return text


def _coerce_all(items: dict) -> dict:
    return {k: _coerce(k, v) for k, v in items.items()}


def parse_config_text(text: str) -> dict:
    items = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        items[key] = value
    return items


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    items = {}
    if path is not None:
        with open(path) as fh:
            items.update(parse_config_text(fh.read()))
    items.update(overrides or {})
    return RunConfig(**_coerce_all(items))


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for key, value in cfg.to_dict().items():
        if isinstance(value, list):
            value = ",".join(str(v) for v in value)
        elif isinstance(value, bool):
            value = str(value).lower()
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
