import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from droneguard.audio_io import AudioClip, write_wav
from droneguard.evaluation import (
    METRIC_KEYS,
    LengthMismatchError,
    TimingReport,
    benchmark,
    compute_metrics,
    confusion,
    evaluate_run,
    f_score,
    f_score_counts,
    metrics_from_counts,
    time_stage,
)
from droneguard.timeline import CoverageError, DetectionTimeline, Span, frame_labels

REPORTED_PAIRS = [
    ((0.7953, 0.8066), 0.8009),
    ((0.5346, 0.8019), 0.6415),
    ((0.9031, 0.3683), 0.5232),
    ((0.5477, 0.9635), 0.6984),
]


def timeline(spans, duration, hop=0.02):
    return DetectionTimeline.from_label_spans(spans, "positive", hop, duration)


# --- timelines -------------------------------------------------------------

def test_one_positive_second_is_fifty_ones():
    labels = frame_labels(timeline([(0, 1, "positive")], 1.0), 0.02, 1.0)
    assert labels.tolist() == [1] * 50


def test_half_and_half():
    tl = timeline([(0, 0.5, "negative"), (0.5, 1, "positive")], 1.0)
    assert frame_labels(tl, 0.02, 1.0).tolist() == [0] * 25 + [1] * 25


def test_center_on_boundary_goes_to_later_span():
    # frame 1 is centred at 0.03, exactly on the span boundary
    tl = timeline([(0, 0.03, "negative"), (0.03, 0.1, "positive")], 0.1)
    assert frame_labels(tl, 0.02, 0.1).tolist() == [0, 1, 1, 1, 1]


def test_gaps_and_overlaps_are_coverage_errors():
    with pytest.raises(CoverageError):
        timeline([(0, 0.4, "negative"), (0.5, 1, "positive")], 1.0)
    with pytest.raises(CoverageError):
        timeline([(0, 0.6, "negative"), (0.5, 1, "positive")], 1.0)
    with pytest.raises(CoverageError):
        timeline([(0, 0.8, "negative")], 1.0)
    with pytest.raises(CoverageError):
        frame_labels(DetectionTimeline.empty(0.02, 1.0), 0.02, 1.0)
    with pytest.raises(CoverageError):
        frame_labels(timeline([(0, 0.5, "positive")], 0.5), 0.02, 1.0)


def test_labels_must_be_binary():
    with pytest.raises(ValueError):
        DetectionTimeline((Span(0, 1, 2, 0.0),), 0.02, 1.0)


def test_from_cells_merges_runs():
    tl = DetectionTimeline.from_cells([0.1, 0.2, 0.3], [0, 1, 1, 0], [0.2, 0.8, 0.6, 0.1], 0.1, 0.4)
    assert [(s.start, s.end, s.label) for s in tl.spans] == [(0, 0.1, 0), (0.1, 0.3, 1), (0.3, 0.4, 0)]
    assert tl.spans[1].score == pytest.approx(0.7)


def test_csv_export(tmp_path):
    tl = timeline([(0, 0.04, "negative"), (0.04, 0.1, "positive")], 0.1)
    tl.to_csv(tmp_path / "t.csv", config_hash="abc")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "# config_hash=abc" and lines[1] == "time_s,label,score"
    assert lines[2:] == ["0.010,0,0.000000", "0.030,0,0.000000", "0.050,1,1.000000",
                         "0.070,1,1.000000", "0.090,1,1.000000"]


def test_empty_timeline_csv_is_header_only(tmp_path):
    DetectionTimeline.empty(0.02, 0.1).to_csv(tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_text().splitlines() == ["time_s,label,score"]


# --- metrics ---------------------------------------------------------------

@pytest.mark.parametrize("pr, f", REPORTED_PAIRS)
def test_reported_f_scores(pr, f):
    assert round(f_score(*pr), 4) == f


def test_perfect_prediction():
    m = compute_metrics([0, 1, 1, 0], [0, 1, 1, 0])
    assert (m.precision, m.recall, m.f_score, m.accuracy) == (1, 1, 1, 1)
    assert m.degenerate == ()


def test_degenerate_denominators_are_flagged():
    m = compute_metrics([0, 0, 0], [0, 0, 0])
    assert (m.precision, m.recall, m.f_score, m.accuracy) == (0, 0, 0, 1)
    assert set(m.degenerate) == {"precision", "recall", "f_score"}
    assert metrics_from_counts(0, 0, 0, 0).degenerate == ("precision", "recall", "f_score", "accuracy")


def test_length_mismatch():
    with pytest.raises(LengthMismatchError):
        compute_metrics([0, 1], [0, 1, 1])


@settings(max_examples=200)
@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), min_size=1, max_size=200))
def test_metrics_match_counting_oracle(pairs):
    pred = [p for p, _ in pairs]
    truth = [t for _, t in pairs]
    tp = sum(p and t for p, t in pairs)
    fp = sum(p and not t for p, t in pairs)
    fn = sum(t and not p for p, t in pairs)
    tn = len(pairs) - tp - fp - fn
    m = compute_metrics(pred, truth)
    assert (m.tp, m.fp, m.tn, m.fn) == (tp, fp, tn, fn)
    if tp + fp:
        assert m.precision == tp / (tp + fp)
    if tp + fn:
        assert m.recall == tp / (tp + fn)
    assert m.accuracy == (tp + tn) / len(pairs)
    assert m.f_score == pytest.approx(f_score_counts(tp, fp, fn), abs=1e-12)
    assert m.f_score == pytest.approx(f_score(m.recall, m.precision), abs=1e-15)
    assert m.f_score <= (m.precision + m.recall) / 2 + 1e-15


@settings(max_examples=100)
@given(st.lists(st.lists(st.tuples(st.booleans(), st.booleans()), min_size=1, max_size=40), min_size=1, max_size=6))
def test_micro_average_equals_pooled_counts(clips):
    pooled = np.zeros(4, int)
    for c in clips:
        pooled += confusion([p for p, _ in c], [t for _, t in c])
    flat = [x for c in clips for x in c]
    assert tuple(pooled) == confusion([p for p, _ in flat], [t for _, t in flat])


def test_metric_ordering_puts_accuracy_last():
    assert METRIC_KEYS[-1] == "accuracy"
    assert list(metrics_from_counts(1, 1, 1, 1).to_dict())[:4] == list(METRIC_KEYS)


# --- manifest evaluation ----------------------------------------------------

class OracleDetector:
    """Returns a scripted timeline per clip stem."""

    frame_hop_s = 0.02

    def __init__(self, answers, deterministic=True):
        self.answers = answers
        self.deterministic = deterministic
        self.seeds = []

    def predict(self, clip, seed):
        self.seeds.append(seed)
        return self.answers[clip.source_id](seed)


def _clip_file(path, seconds=1.0, rate=1000):
    write_wav(AudioClip(np.zeros(int(seconds * rate)), rate), path)
    return str(path)


def test_one_right_one_wrong_is_half_accuracy(tmp_path):
    a = _clip_file(tmp_path / "a.wav")
    b = _clip_file(tmp_path / "b.wav")
    spans = [(0, 0.5, "negative"), (0.5, 1, "positive")]
    right = lambda s: timeline(spans, 1.0)
    wrong = lambda s: timeline([(0, 0.5, "positive"), (0.5, 1, "negative")], 1.0)
    det = OracleDetector({"a": right, "b": wrong})
    rows = [{"path": a, "spans": spans, "status": "ok"}, {"path": b, "spans": spans, "status": "ok"}]
    res = evaluate_run(det, rows, repetitions=10)
    assert res.mean["accuracy"] == 0.5
    assert all(v == 0.0 for v in res.std.values())
    assert det.seeds == [0, 0]  # deterministic: one pass only
    assert [c.metrics.accuracy for c in res.per_clip] == [1.0, 0.0]
    assert [c.path for c in res.per_clip] == ["a.wav", "b.wav"]


def test_stochastic_detector_uses_distinct_seeds(tmp_path):
    a = _clip_file(tmp_path / "a.wav")
    spans = [(0, 1, "positive")]
    flip = lambda s: timeline([(0, 1, "positive" if s % 2 == 0 else "negative")], 1.0)
    det = OracleDetector({"a": flip}, deterministic=False)
    res = evaluate_run(det, [{"path": a, "spans": spans}], repetitions=4, seed=10)
    assert det.seeds == [10, 11, 12, 13]
    assert res.mean["recall"] == 0.5 and res.std["recall"] == 0.5


def test_unreadable_clips_are_skipped(tmp_path):
    a = _clip_file(tmp_path / "a.wav")
    bad = tmp_path / "bad.wav"
    bad.write_bytes(b"not a wav")
    spans = [(0, 1, "negative")]
    det = OracleDetector({"a": lambda s: timeline(spans, 1.0)})
    rows = [{"path": str(bad), "spans": spans}, {"path": a, "spans": spans},
            {"path": None, "spans": [], "status": "error", "error": "boom"}]
    res = evaluate_run(det, rows, repetitions=2)
    assert len(res.skipped) == 2 and "WavDecodeError" in res.skipped[0]["reason"]
    assert res.pooled.tn == 50
    data = json.loads(res.to_json())
    assert "20 ms" in data["granularity"] and data["repetitions"] == 2
    assert res.to_text().splitlines()[0].split() == ["metric", "mean", "std"]


# --- benchmark -------------------------------------------------------------

def test_benchmark_requires_a_minute(tmp_path):
    path = _clip_file(tmp_path / "short.wav", 2.0, 24000)
    with pytest.raises(ValueError, match="60 s"):
        benchmark(path, {})
    with pytest.raises(ValueError, match="5 repetitions"):
        benchmark(path, {}, repetitions=3)


def test_benchmark_stages_and_flag(tmp_path):
    path = _clip_file(tmp_path / "c.wav", 3.0, 24000)
    rep = benchmark(path, {}, repetitions=5, require_minute=False)
    assert set(rep.stages) == {"data_read", "feature_engineering"}
    assert all(v >= 0 for v in rep.stages.values())
    assert all(len(s) == 5 for s in rep.samples.values())
    assert rep.real_time and rep.clip_length_s == 3.0
    assert json.loads(rep.to_json())["real_time"] is True


def test_stage_timing_is_repeatable():
    x = np.random.default_rng(0).standard_normal((300, 300))
    a, _, _ = time_stage(lambda: x @ x, 7)
    b, _, _ = time_stage(lambda: x @ x, 7)
    assert max(a, b) / min(a, b) <= 2


def test_real_time_flag_definition():
    assert TimingReport({"a": 30.0, "b": 29.9}, 60.0, 5, {}).real_time
    assert not TimingReport({"a": 30.0, "b": 30.0}, 60.0, 5, {}).real_time
    rep = TimingReport({"feature_engineering": 0.1, "prediction_gmm": 0.2}, 60.0, 5, {})
    assert rep.feature_plus_prediction() == {"gmm": pytest.approx(0.3)}
