"""Minibatch training with per-epoch shuffling and accuracy-based early stopping."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .models import Model

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, message, history, batch: int, layer: str | None):
        super().__init__(f"{message} (batch {batch}, first non-finite layer: {layer or 'loss'})")
        self.history = history
        self.batch = batch
        self.layer = layer


class LeakageError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 128
    patience: int = 3
    max_epochs: int = 50
    seed: int = 0
    optimizer: str = "adam"

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")

    @classmethod
    def for_model(cls, kind: str, **overrides) -> "TrainConfig":
        base = {"cnn": dict(learning_rate=0.001, batch_size=128),
                "rnn": dict(learning_rate=0.0005, batch_size=64)}[kind]
        return cls(**{**base, **overrides})

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Dataset:
    x: np.ndarray  # (N, 12, 40) windows
    y: np.ndarray  # (N,) int labels
    groups: np.ndarray  # (N,) clip identifiers

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=int)
        self.groups = np.asarray(self.groups)
        if not len(self.x) == len(self.y) == len(self.groups):
            raise ValueError("x, y and groups must have equal length")

    def __len__(self):
        return len(self.y)


class Adam:
    def __init__(self, params: dict[str, Tensor], lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.t = 0

    def step(self):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, p in self.params.items():
            if p.grad is None:
                continue
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * p.grad
            v *= self.b2
            v += (1.0 - self.b2) * p.grad * p.grad
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class SGD:
    def __init__(self, params: dict[str, Tensor], lr: float):
        self.params, self.lr = params, lr

    def step(self):
        for p in self.params.values():
            if p.grad is not None:
                p.data -= self.lr * p.grad


class EarlyStopping:
    """Stop once the monitored score has not improved for ``patience`` epochs."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best_score = -np.inf
        self.best_epoch = 0
        self.stale = 0

    def update(self, epoch: int, score: float) -> bool:
        """Record an epoch; True if it is a new best."""
        if score > self.best_score:
            self.best_score, self.best_epoch, self.stale = score, epoch, 0
            return True
        self.stale += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.stale >= self.patience


@dataclass
class History:
    epochs: list = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False
    interrupted: bool = False

    def record(self, epoch, loss, val_accuracy):
        self.epochs.append({"epoch": epoch, "loss": float(loss), "val_accuracy": float(val_accuracy)})

    @property
    def val_accuracy(self) -> list[float]:
        return [e["val_accuracy"] for e in self.epochs]

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "loss", "val_accuracy"])
            for e in self.epochs:
                w.writerow([e["epoch"], repr(e["loss"]), repr(e["val_accuracy"])])


def accuracy(model: Model, data: Dataset, batch_size: int = 256) -> float:
    probs = model.predict_proba(data.x, batch_size=batch_size, dtype=np.float64)
    return float(np.mean(probs.argmax(axis=1) == data.y))


def check_disjoint(train_set: Dataset, val_set: Dataset) -> None:
    shared = set(np.unique(train_set.groups)) & set(np.unique(val_set.groups))
    if shared:
        raise LeakageError(f"clips appear in both training and validation sets: {sorted(shared)[:5]}")


def train(model: Model, train_set: Dataset, val_set: Dataset, cfg: TrainConfig,
          evaluate=None) -> tuple[Model, History]:
    """Fit ``model`` in place and return it with its history.

    Each epoch reshuffles the training set, runs minibatch updates and scores
    validation accuracy. Training stops after ``cfg.patience`` epochs without
    improvement and the parameters of the best epoch are restored.
    ``evaluate`` overrides the validation scorer (``evaluate(model) -> float``).
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValueError("training and validation sets must be non-empty")
    check_disjoint(train_set, val_set)
    rng = np.random.default_rng(cfg.seed)
    params = model.parameters()
    opt = Adam(params, cfg.learning_rate) if cfg.optimizer == "adam" else SGD(params, cfg.learning_rate)
    stopper = EarlyStopping(cfg.patience)
    history = History()
    best_state = model.state_dict()
    score = evaluate or (lambda m: accuracy(m, val_set))
    n = len(train_set)
    batch_id = 0
    try:
        for epoch in range(1, cfg.max_epochs + 1):
            order = rng.permutation(n)
            losses = []
            for start in range(0, n, cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                xb = Tensor(train_set.x[idx].astype(np.float64))
                model.zero_grad()
                loss = ad.softmax_cross_entropy(model.forward(xb, training=True, rng=rng), train_set.y[idx])
                if not np.isfinite(loss.data):
                    raise TrainingDiverged("non-finite loss", history, batch_id, model.first_nonfinite(xb))
                loss.backward()
                opt.step()
                losses.append(float(loss.data) * len(idx))
                batch_id += 1
            val_acc = score(model)
            history.record(epoch, sum(losses) / n, val_acc)
            log.info("epoch %d loss %.4f val_acc %.4f", epoch, sum(losses) / n, val_acc)
            if stopper.update(epoch, val_acc):
                best_state = model.state_dict()
            if stopper.should_stop:
                history.stopped_early = True
                break
    except KeyboardInterrupt:
        history.interrupted = True
        log.warning("training interrupted; keeping best-so-far parameters")
    model.load_state_dict(best_state)
    history.best_epoch = stopper.best_epoch
    return model, history
