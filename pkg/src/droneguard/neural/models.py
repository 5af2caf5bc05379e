"""The two neural detectors: a 9-stage CNN and a 3-layer bidirectional LSTM.

Both take windows of 12 log-mel frames x 40 mel bins and emit two logits
(class 0 = negative, class 1 = positive).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class ShapeError(ValueError):
    pass


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Model:
    """Named parameters plus a forward pass producing logits."""

    kind = ""

    def __init__(self):
        self.params: dict[str, Tensor] = {}

    def _param(self, name: str, value: np.ndarray) -> Tensor:
        t = Tensor(np.asarray(value, dtype=np.float64), requires_grad=True, op=name)
        self.params[name] = t
        return t

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self.params) ^ set(state)
        if missing:
            raise KeyError(f"state dict does not match parameters: {sorted(missing)}")
        for k, t in self.params.items():
            if state[k].shape != t.shape:
                raise ShapeError(f"parameter {k}: stored shape {state[k].shape}, model expects {t.shape}")
            t.data = np.array(state[k], dtype=np.float64)

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def n_parameters(self) -> int:
        return sum(t.data.size for t in self.params.values())

    def forward(self, x, training: bool = False, rng=None, hook=None) -> Tensor:
        raise NotImplementedError

    def trace(self, x) -> list[tuple[str, tuple]]:
        """(layer name, output shape) for every stage of an eval-mode forward pass."""
        shapes = []
        with ad.no_grad():
            self.forward(x, hook=lambda name, t: shapes.append((name, t.shape)))
        return shapes

    def first_nonfinite(self, x) -> str | None:
        found = []

        def hook(name, t):
            if not found and not np.all(np.isfinite(t.data)):
                found.append(name)

        with ad.no_grad():
            self.forward(x, hook=hook)
        return found[0] if found else None

    def predict_proba(self, x: np.ndarray, batch_size: int = 256, dtype=np.float32) -> np.ndarray:
        """Class probabilities (N, 2) in eval mode, computed in ``dtype``."""
        saved = {k: t.data for k, t in self.params.items()}
        out = []
        try:
            for k, t in self.params.items():
                t.data = saved[k].astype(dtype, copy=False)
            with ad.no_grad():
                for i in range(0, len(x), batch_size):
                    xb = Tensor(np.asarray(x[i:i + batch_size], dtype=dtype))
                    out.append(ad.softmax(self.forward(xb).data.astype(np.float64)))
        finally:
            for k, t in self.params.items():
                t.data = saved[k]
        if not out:
            return np.zeros((0, 2))
        return np.concatenate(out)


@dataclass(frozen=True)
class CnnArchitecture:
    input_shape: tuple = (12, 40)
    conv_channels: tuple = (32, 32, 256, 256)
    kernel: int = 3
    dense_units: int = 1024
    dropout: float = 0.5
    n_classes: int = 2

    def __post_init__(self):
        if len(self.conv_channels) != 4:
            raise ValueError("the CNN has exactly four conv layers (two per pooling block)")

    @property
    def pooled_shape(self) -> tuple:
        h, w = self.input_shape
        return (h // 2 // 2, w // 2 // 2, self.conv_channels[3])

    @property
    def flatten_size(self) -> int:
        return int(np.prod(self.pooled_shape))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


class CNN(Model):
    """conv-conv-pool-drop, conv-conv-pool-drop, dense-drop, dense (softmax applied outside)."""

    kind = "cnn"

    def __init__(self, arch: CnnArchitecture = CnnArchitecture(), seed: int = 0):
        super().__init__()
        self.arch = arch
        rng = np.random.default_rng(seed)
        k = arch.kernel
        cin = 1
        for i, cout in enumerate(arch.conv_channels, start=1):
            self._param(f"conv{i}.w", glorot_uniform(rng, (k, k, cin, cout), k * k * cin, k * k * cout))
            self._param(f"conv{i}.b", np.zeros(cout))
            cin = cout
        self._param("fc1.w", glorot_uniform(rng, (arch.flatten_size, arch.dense_units),
                                            arch.flatten_size, arch.dense_units))
        self._param("fc1.b", np.zeros(arch.dense_units))
        self._param("fc2.w", glorot_uniform(rng, (arch.dense_units, arch.n_classes),
                                            arch.dense_units, arch.n_classes))
        self._param("fc2.b", np.zeros(arch.n_classes))

    def forward(self, x, training=False, rng=None, hook=None) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x))
        if x.ndim == 3:
            x = ad.reshape(x, x.shape + (1,))
        if x.shape[1:] != tuple(self.arch.input_shape) + (1,):
            raise ShapeError(f"layer 'input': expected (B, {self.arch.input_shape[0]}, "
                             f"{self.arch.input_shape[1]}[, 1]), got {x.shape}")
        emit = hook or (lambda name, t: None)
        p = self.params
        drop = self.arch.dropout
        for block, (a, b) in enumerate(((1, 2), (3, 4)), start=1):
            x = ad.relu(ad.conv2d(x, p[f"conv{a}.w"], p[f"conv{a}.b"]))
            emit(f"conv{a}", x)
            x = ad.relu(ad.conv2d(x, p[f"conv{b}.w"], p[f"conv{b}.b"]))
            emit(f"conv{b}", x)
            x = ad.maxpool2d(x, 2)
            emit(f"pool{block}", x)
            x = ad.dropout(x, drop, rng, training)
            emit(f"dropout{block}", x)
        x = ad.reshape(x, (x.shape[0], -1))
        emit("flatten", x)
        x = ad.relu(ad.linear(x, p["fc1.w"], p["fc1.b"]))
        emit("fc1", x)
        x = ad.dropout(x, drop, rng, training)
        emit("dropout3", x)
        x = ad.linear(x, p["fc2.w"], p["fc2.b"])
        emit("fc2", x)
        return x


@dataclass(frozen=True)
class RnnArchitecture:
    input_dim: int = 40
    steps: int = 12
    hidden: int = 300
    layers: int = 3
    n_classes: int = 2
    # "final": concat last forward and last backward states; "mean": average over steps
    pooling: str = "final"
    forget_bias: float = 1.0

    def __post_init__(self):
        if self.pooling not in ("final", "mean"):
            raise ValueError(f"pooling must be 'final' or 'mean', got {self.pooling!r}")

    @property
    def head_dim(self) -> int:
        return 2 * self.hidden

    def layer_input_dim(self, layer: int) -> int:
        return self.input_dim if layer == 0 else 2 * self.hidden

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def lstm_direction(xproj: Tensor, w_h: Tensor, hidden: int, reverse: bool,
                   h0: Tensor | None = None, c0: Tensor | None = None, hook=None):
    """Run one LSTM direction over precomputed input projections (B, T, 4H).

    Gate order along the last axis is input, forget, candidate, output.
    Returns per-step hidden states in original time order and the final cell.
    """
    B, T, _ = xproj.shape
    H = hidden
    dtype = xproj.data.dtype
    h = h0 if h0 is not None else Tensor(np.zeros((B, H), dtype=dtype))
    c = c0 if c0 is not None else Tensor(np.zeros((B, H), dtype=dtype))
    outs = [None] * T
    for t in (range(T - 1, -1, -1) if reverse else range(T)):
        z = ad.getitem(xproj, (slice(None), t)) + ad.matmul(h, w_h)
        i = ad.sigmoid(z[:, :H])
        f = ad.sigmoid(z[:, H:2 * H])
        g = ad.tanh(z[:, 2 * H:3 * H])
        o = ad.sigmoid(z[:, 3 * H:])
        c = f * c + i * g
        h = o * ad.tanh(c)
        if hook:
            hook(t, c)
        outs[t] = h
    return outs, c


class BiLSTM(Model):
    kind = "rnn"

    def __init__(self, arch: RnnArchitecture = RnnArchitecture(), seed: int = 0):
        super().__init__()
        self.arch = arch
        rng = np.random.default_rng(seed)
        H = arch.hidden
        for layer in range(arch.layers):
            n_in = arch.layer_input_dim(layer)
            for d in ("fw", "bw"):
                pre = f"lstm{layer + 1}.{d}"
                self._param(f"{pre}.w_x", glorot_uniform(rng, (n_in, 4 * H), n_in, 4 * H))
                self._param(f"{pre}.w_h", glorot_uniform(rng, (H, 4 * H), H, 4 * H))
                bias = np.zeros(4 * H)
                bias[H:2 * H] = arch.forget_bias
                self._param(f"{pre}.b", bias)
        self._param("fc.w", glorot_uniform(rng, (arch.head_dim, arch.n_classes), arch.head_dim, arch.n_classes))
        self._param("fc.b", np.zeros(arch.n_classes))

    def forward(self, x, training=False, rng=None, hook=None) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x))
        a = self.arch
        if x.ndim != 3 or x.shape[2] != a.input_dim:
            raise ShapeError(f"layer 'lstm1': expected (B, T, {a.input_dim}), got {x.shape}")
        emit = hook or (lambda name, t: None)
        p = self.params
        B, T, _ = x.shape
        H = a.hidden
        seq = x
        for layer in range(a.layers):
            n_in = seq.shape[2]
            flat = ad.reshape(seq, (B * T, n_in))
            finals = []
            outs = {}
            for d in ("fw", "bw"):
                pre = f"lstm{layer + 1}.{d}"
                xproj = ad.reshape(ad.linear(flat, p[f"{pre}.w_x"], p[f"{pre}.b"]), (B, T, 4 * H))
                outs[d], _ = lstm_direction(xproj, p[f"{pre}.w_h"], H, reverse=(d == "bw"))
                finals.append(outs[d][0] if d == "bw" else outs[d][-1])
            seq = ad.stack([ad.concat([fw, bw], axis=1) for fw, bw in zip(outs["fw"], outs["bw"])], axis=1)
            emit(f"lstm{layer + 1}", seq)
        head = ad.concat(finals, axis=1) if a.pooling == "final" else ad.mean(seq, axis=1)
        emit("head_input", head)
        logits = ad.linear(head, p["fc.w"], p["fc.b"])
        emit("fc", logits)
        return logits


def build_model(kind: str, arch_dict: dict | None = None, seed: int = 0) -> Model:
    if kind == "cnn":
        return CNN(CnnArchitecture.from_dict(arch_dict) if arch_dict else CnnArchitecture(), seed)
    if kind == "rnn":
        return BiLSTM(RnnArchitecture.from_dict(arch_dict) if arch_dict else RnnArchitecture(), seed)
    raise ValueError(f"unknown model kind {kind!r}; expected 'cnn' or 'rnn'")
