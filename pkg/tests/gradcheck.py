"""Central-difference gradient oracle shared by the neural and acceptance tests."""

import numpy as np

from droneguard.neural import autodiff as ad
from droneguard.neural.models import CNN, BiLSTM, CnnArchitecture, RnnArchitecture


def loss_fn(model, x, y):
    return ad.softmax_cross_entropy(model.forward(ad.Tensor(x)), y)


def max_relative_error(model, x, y, eps=1e-5, floor=1e-7):
    """Largest |analytic - numeric| / max(|analytic|, |numeric|, floor) over all parameters."""
    model.zero_grad()
    loss_fn(model, x, y).backward()
    worst = 0.0
    for name, p in model.parameters().items():
        analytic = p.grad.copy()
        flat = p.data.reshape(-1)
        numeric = np.empty_like(flat)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            up = float(loss_fn(model, x, y).data)
            flat[i] = old - eps
            down = float(loss_fn(model, x, y).data)
            flat[i] = old
            numeric[i] = (up - down) / (2 * eps)
        numeric = numeric.reshape(p.shape)
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
        worst = max(worst, float(np.max(np.abs(analytic - numeric) / denom)))
    return worst


def tiny_cnn(seed):
    """2 filters per conv on a 4x4 input (two 2x2 pools leave 1x1), random biases."""
    model = CNN(CnnArchitecture(input_shape=(4, 4), conv_channels=(2, 2, 2, 2), dense_units=3), seed)
    rng = np.random.default_rng(seed + 1000)
    for name, p in model.params.items():
        if name.endswith(".b"):
            p.data = rng.uniform(-0.1, 0.1, p.shape)
    x = rng.standard_normal((2, 4, 4))
    y = rng.integers(0, 2, 2)
    return model, x, y


def tiny_lstm(seed, layers=1):
    """2 time steps, 3 blocks per direction; one bidirectional layer unless asked."""
    model = BiLSTM(RnnArchitecture(input_dim=3, steps=2, hidden=3, layers=layers), seed)
    rng = np.random.default_rng(seed + 2000)
    x = rng.standard_normal((2, 2, 3))
    y = rng.integers(0, 2, 2)
    return model, x, y
