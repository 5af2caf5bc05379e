import numpy as np
import pytest
from sklearn.linear_model import LogisticRegression

from droneguard.features import FeatureConfig
from droneguard.neural import autodiff as ad
from droneguard.neural.detector import (
    NeuralDetector,
    fit_normaliser,
    load_detector,
    save_detector,
    timeline_from_window_probs,
)
from droneguard.neural.models import CNN, BiLSTM, CnnArchitecture, RnnArchitecture, ShapeError, build_model, lstm_direction
from droneguard.neural.train import (
    Dataset,
    EarlyStopping,
    LeakageError,
    TrainConfig,
    TrainingDiverged,
    train,
)
from gradcheck import max_relative_error, tiny_cnn, tiny_lstm


# --- autodiff primitives ---------------------------------------------------

def test_linear_softmax_gradient_closed_form():
    x = np.array([[0.5, -1.0, 2.0]])
    w = ad.Tensor(np.array([[0.1, -0.2], [0.3, 0.4], [-0.5, 0.6]]), requires_grad=True)
    loss = ad.softmax_cross_entropy(ad.matmul(ad.Tensor(x), w), np.array([1]))
    loss.backward()
    p = ad.softmax(x @ w.data)
    expected = x.T @ (p - np.array([[0.0, 1.0]]))
    np.testing.assert_allclose(w.grad, expected, rtol=0, atol=1e-15)


def test_elementwise_ops_against_numeric(rng):
    a = ad.Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    b = ad.Tensor(rng.standard_normal((1, 4)), requires_grad=True)

    def f():
        h = ad.tanh(a * b + a) - ad.sigmoid(b)
        return ad.mean(ad.mean(ad.relu(h) + h * h, axis=1), axis=0)

    f().backward()
    for t in (a, b):
        num = np.zeros_like(t.data)
        for idx in np.ndindex(t.shape):
            old = t.data[idx]
            t.data[idx] = old + 1e-6
            up = float(f().data)
            t.data[idx] = old - 1e-6
            down = float(f().data)
            t.data[idx] = old
            num[idx] = (up - down) / 2e-6
        np.testing.assert_allclose(t.grad, num, rtol=1e-6, atol=1e-9)


def test_gradients_accumulate_over_reuse():
    a = ad.Tensor(np.array([2.0]), requires_grad=True)
    (a * a + a).backward()
    assert a.grad.tolist() == [5.0]


def test_no_grad_records_nothing():
    a = ad.Tensor(np.ones(3), requires_grad=True)
    with ad.no_grad():
        out = ad.relu(a * 2.0)
    assert not out.requires_grad


def test_sigmoid_saturates_cleanly():
    x = np.array([-1000.0, 0.0, 1000.0])
    out = ad.sigmoid(ad.Tensor(x)).data
    assert out.tolist() == [0.0, 0.5, 1.0]


def test_maxpool_routes_gradient_to_first_argmax():
    x = ad.Tensor(np.array([[[[1.0], [3.0]], [[3.0], [2.0]]]]), requires_grad=True)  # one 2x2 cell, tie at 3
    out = ad.maxpool2d(x, 2)
    assert out.data.reshape(-1).tolist() == [3.0]
    out.backward(np.ones_like(out.data))
    assert x.grad.reshape(-1).tolist() == [0.0, 1.0, 0.0, 0.0]


def test_maxpool_drops_odd_remainder():
    x = ad.Tensor(np.arange(3 * 5, dtype=float).reshape(1, 3, 5, 1))
    assert ad.maxpool2d(x, 2).shape == (1, 1, 2, 1)


def test_dropout_expectation_and_eval_identity():
    x = ad.Tensor(np.ones((200, 500)))
    out = ad.dropout(x, 0.5, np.random.default_rng(0), training=True).data
    assert set(np.unique(out)) == {0.0, 2.0}
    assert out.mean() == pytest.approx(1.0, abs=0.01)
    assert ad.dropout(x, 0.5, None, training=False) is x


def test_conv2d_matches_direct_loop(rng):
    x = rng.standard_normal((2, 5, 6, 3))
    w = rng.standard_normal((3, 3, 3, 4))
    b = rng.standard_normal(4)
    out = ad.conv2d(ad.Tensor(x), ad.Tensor(w), ad.Tensor(b)).data
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    ref = np.zeros((2, 5, 6, 4))
    for i in range(5):
        for j in range(6):
            ref[:, i, j, :] = np.einsum("bhwc,hwco->bo", xp[:, i:i + 3, j:j + 3, :], w) + b
    np.testing.assert_allclose(out, ref, atol=1e-12)


# --- models ----------------------------------------------------------------

def test_cnn_shape_trace_matches_table():
    model = CNN(CnnArchitecture(), seed=0)
    shapes = dict(model.trace(np.zeros((2, 12, 40))))
    assert shapes["conv2"] == (2, 12, 40, 32)
    assert shapes["pool1"] == (2, 6, 20, 32)
    assert shapes["pool2"] == (2, 3, 10, 256)
    assert shapes["flatten"] == (2, 7680)
    assert shapes["fc1"] == (2, 1024) and shapes["fc2"] == (2, 2)
    assert model.arch.flatten_size == 7680
    assert model.n_parameters() == 8_541_026


def test_cnn_zero_input_gives_even_odds():
    model = CNN(CnnArchitecture(), seed=3)
    np.testing.assert_allclose(model.predict_proba(np.zeros((1, 12, 40))), [[0.5, 0.5]])


def test_rnn_head_is_600_wide():
    model = BiLSTM(RnnArchitecture(), seed=0)
    shapes = dict(model.trace(np.zeros((2, 12, 40))))
    assert shapes["head_input"] == (2, 600)
    assert shapes["lstm1"] == shapes["lstm3"] == (2, 12, 600)
    assert model.n_parameters() == 5_144_402


def test_shape_errors_name_the_layer():
    with pytest.raises(ShapeError, match="'input'"):
        CNN(CnnArchitecture(), 0).forward(np.zeros((1, 10, 40)))
    with pytest.raises(ShapeError, match="'lstm1'"):
        BiLSTM(RnnArchitecture(), 0).forward(np.zeros((1, 12, 39)))


def test_cnn_gradients_match_finite_differences():
    assert max(max_relative_error(*tiny_cnn(s)) for s in range(3)) <= 1e-4


def test_lstm_gradients_match_finite_differences():
    assert max(max_relative_error(*tiny_lstm(s)) for s in range(3)) <= 1e-4


def test_stacked_lstm_gradients_match_finite_differences():
    # deep-stack gradients can fall to 1e-9; floor the denominator at the FD resolution
    assert max(max_relative_error(*tiny_lstm(s, layers=3), floor=1e-6) for s in range(2)) <= 1e-4


def test_mean_pooling_gradients():
    model = BiLSTM(RnnArchitecture(input_dim=3, steps=2, hidden=3, layers=1, pooling="mean"), 0)
    x = np.random.default_rng(0).standard_normal((2, 2, 3))
    assert max_relative_error(model, x, np.array([0, 1])) <= 1e-4


def test_lstm_state_carries_across_calls(rng):
    H = 4
    xproj = rng.standard_normal((2, 5, 4 * H))
    w_h = ad.Tensor(rng.standard_normal((H, 4 * H)) * 0.3)
    full, c_full = lstm_direction(ad.Tensor(xproj), w_h, H, reverse=False)
    first, c_mid = lstm_direction(ad.Tensor(xproj[:, :2]), w_h, H, reverse=False)
    rest, c_end = lstm_direction(ad.Tensor(xproj[:, 2:]), w_h, H, reverse=False, h0=first[-1], c0=c_mid)
    np.testing.assert_allclose(rest[-1].data, full[-1].data, atol=1e-14)
    np.testing.assert_allclose(c_end.data, c_full.data, atol=1e-14)


def test_lstm_hook_sees_every_step_in_order(rng):
    seen = []
    xproj = ad.Tensor(rng.standard_normal((1, 4, 8)))
    lstm_direction(xproj, ad.Tensor(np.zeros((2, 8))), 2, reverse=True, hook=lambda t, c: seen.append(t))
    assert seen == [3, 2, 1, 0]


def test_state_dict_roundtrip_and_shape_check():
    a = build_model("rnn", RnnArchitecture(input_dim=4, hidden=5, layers=2).to_dict(), seed=1)
    b = build_model("rnn", RnnArchitecture(input_dim=4, hidden=5, layers=2).to_dict(), seed=2)
    b.load_state_dict(a.state_dict())
    x = np.random.default_rng(0).standard_normal((3, 12, 4))
    np.testing.assert_array_equal(a.predict_proba(x, dtype=np.float64), b.predict_proba(x, dtype=np.float64))
    bad = a.state_dict()
    bad["fc.w"] = np.zeros((3, 3))
    with pytest.raises(ShapeError):
        b.load_state_dict(bad)


def test_predict_proba_restores_float64_parameters():
    model = build_model("cnn", CnnArchitecture(conv_channels=(2, 2, 2, 2), dense_units=4).to_dict(), 0)
    model.predict_proba(np.zeros((1, 12, 40)))
    assert all(p.data.dtype == np.float64 for p in model.parameters().values())


# --- training ----------------------------------------------------------------

def test_early_stopping_rule():
    stop = EarlyStopping(3)
    flags = []
    for epoch, score in enumerate([0.6, 0.7, 0.7, 0.7, 0.7], start=1):
        stop.update(epoch, score)
        flags.append(stop.should_stop)
    assert flags == [False, False, False, False, True]
    assert stop.best_epoch == 2


def _small(kind, seed=0):
    if kind == "cnn":
        return CNN(CnnArchitecture(input_shape=(4, 8), conv_channels=(4, 4, 8, 8), dense_units=16, dropout=0.2), seed)
    return BiLSTM(RnnArchitecture(input_dim=8, steps=4, hidden=8, layers=1), seed)


def _separable(n, seed):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, n)
    x = rng.standard_normal((n, 4, 8))
    x[:, :, 2] += np.where(y == 1, 2.5, -2.5)[:, None]
    return x, y


def test_training_returns_best_epoch_weights():
    x, y = _separable(64, 0)
    model = _small("cnn")
    snapshots = []
    scores = iter([0.6, 0.7, 0.7, 0.7, 0.7, 0.9])

    def scripted(m):
        snapshots.append(m.state_dict())
        return next(scores)

    tr = Dataset(x[:48], y[:48], np.zeros(48, int))
    va = Dataset(x[48:], y[48:], np.ones(16, int))
    model, hist = train(model, tr, va, TrainConfig(0.01, 16, patience=3), evaluate=scripted)
    assert len(hist.epochs) == 5 and hist.stopped_early and hist.best_epoch == 2
    for k, v in model.state_dict().items():
        np.testing.assert_array_equal(v, snapshots[1][k])


@pytest.mark.parametrize("kind", ["cnn", "rnn"])
def test_separable_toy_data_is_learned(kind):
    x, y = _separable(400, 1)
    xv, yv = _separable(200, 2)
    # oracle: a linear model separates the flattened features
    lr = LogisticRegression(max_iter=2000).fit(x.reshape(len(x), -1), y)
    assert lr.score(xv.reshape(len(xv), -1), yv) >= 0.99
    model, hist = train(_small(kind), Dataset(x, y, np.zeros(400, int)), Dataset(xv, yv, np.ones(200, int)),
                        TrainConfig(0.005, 32, patience=3, max_epochs=50, seed=0))
    assert max(hist.val_accuracy) >= 0.99


def test_training_is_deterministic():
    x, y = _separable(96, 3)
    runs = []
    for _ in range(2):
        _, hist = train(_small("cnn"), Dataset(x[:64], y[:64], np.zeros(64, int)),
                        Dataset(x[64:], y[64:], np.ones(32, int)), TrainConfig(0.01, 16, max_epochs=3, seed=5))
        runs.append(hist.epochs)
    assert runs[0] == runs[1]


def test_divergence_reports_batch_and_layer():
    x, y = _separable(32, 4)
    x[:] = np.nan
    with pytest.raises(TrainingDiverged) as err:
        train(_small("cnn"), Dataset(x, y, np.zeros(32, int)), Dataset(x[:4], y[:4], np.ones(4, int)),
              TrainConfig(0.01, 32))
    assert err.value.batch == 0 and err.value.layer == "conv1"
    assert err.value.history.epochs == []


def test_leakage_is_rejected():
    x, y = _separable(8, 5)
    with pytest.raises(LeakageError):
        train(_small("cnn"), Dataset(x, y, np.arange(8) % 2), Dataset(x, y, np.ones(8, int)), TrainConfig(0.01, 4))


def test_empty_sets_are_rejected():
    x, y = _separable(4, 6)
    with pytest.raises(ValueError):
        train(_small("cnn"), Dataset(x[:0], y[:0], np.zeros(0, int)), Dataset(x, y, np.ones(4, int)), TrainConfig(0.01, 4))


def test_interrupt_keeps_best_so_far():
    x, y = _separable(32, 7)
    calls = []

    def interrupt_on_third(m):
        calls.append(m.state_dict())
        if len(calls) == 3:
            raise KeyboardInterrupt
        return [0.5, 0.8][len(calls) - 1]

    model, hist = train(_small("rnn"), Dataset(x, y, np.zeros(32, int)), Dataset(x[:8], y[:8], np.ones(8, int)),
                        TrainConfig(0.01, 8), evaluate=interrupt_on_third)
    assert hist.interrupted and hist.best_epoch == 2
    for k, v in model.state_dict().items():
        np.testing.assert_array_equal(v, calls[1][k])


def test_history_csv(tmp_path):
    x, y = _separable(32, 8)
    _, hist = train(_small("cnn"), Dataset(x, y, np.zeros(32, int)), Dataset(x[:8], y[:8], np.ones(8, int)),
                    TrainConfig(0.01, 8, max_epochs=2))
    hist.to_csv(tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "epoch,loss,val_accuracy" and len(lines) == 3


def test_train_config_defaults():
    cnn, rnn = TrainConfig.for_model("cnn"), TrainConfig.for_model("rnn")
    assert (cnn.learning_rate, cnn.batch_size) == (0.001, 128)
    assert (rnn.learning_rate, rnn.batch_size) == (0.0005, 64)
    assert cnn.patience == rnn.patience == 3


# --- detector and timelines ------------------------------------------------

def test_constant_negative_output_is_one_span():
    centers = 0.13 + 0.02 * np.arange(38)
    tl = timeline_from_window_probs(np.full(38, 0.1), centers, 0.02, 1.0)
    assert len(tl.spans) == 1 and tl.spans[0].label == 0
    assert (tl.spans[0].start, tl.spans[0].end) == (0.0, 1.0)


def test_alternating_windows_alternate_every_20ms():
    centers = 0.13 + 0.02 * np.arange(38)
    probs = np.tile([0.9, 0.1], 19)
    tl = timeline_from_window_probs(probs, centers, 0.02, 1.0)
    assert [s.label for s in tl.spans] == [1, 0] * 19
    inner = [s.end - s.start for s in tl.spans[1:-1]]
    np.testing.assert_allclose(inner, 0.02)


def test_short_input_gives_empty_timeline():
    assert timeline_from_window_probs(np.zeros(0), np.zeros(0), 0.02, 0.2).is_empty


def test_normaliser_per_bin():
    w = np.random.default_rng(0).standard_normal((50, 12, 4)) * [1, 2, 3, 0] + [5, 0, -5, 7]
    mean, std = fit_normaliser(w)
    np.testing.assert_allclose(mean, [5, 0, -5, 7], atol=0.5)
    assert std[3] == 1.0  # constant bin is left unscaled


def test_detector_file_roundtrip(tmp_path):
    model = _small("rnn", seed=4)
    det = NeuralDetector(model, np.arange(8.0), np.ones(8) * 2, FeatureConfig().to_dict(), {"seed": 1}, 3)
    save_detector(det, tmp_path / "m.nn", {"config_hash": "h"})
    back, header = load_detector(tmp_path / "m.nn")
    assert header["config_hash"] == "h" and back.best_epoch == 3 and back.kind == "rnn"
    x = np.random.default_rng(0).standard_normal((5, 4, 8))
    np.testing.assert_array_equal(back.window_probabilities(x), det.window_probabilities(x))
