"""Detection timelines: labelled, scored spans covering a clip."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

NEGATIVE = 0
POSITIVE = 1


class CoverageError(ValueError):
    pass


@dataclass(frozen=True)
class Span:
    start: float
    end: float
    label: int
    score: float


@dataclass(frozen=True)
class DetectionTimeline:
    spans: tuple[Span, ...]
    frame_hop_s: float
    duration_s: float

    def __post_init__(self):
        prev_end = 0.0
        for s in self.spans:
            if s.label not in (NEGATIVE, POSITIVE):
                raise ValueError(f"span label must be 0 or 1, got {s.label}")
            if not np.isclose(s.start, prev_end, rtol=0, atol=1e-9) or s.end < s.start:
                raise CoverageError(f"span {s} does not continue from {prev_end}")
            prev_end = s.end
        if self.spans and not np.isclose(prev_end, self.duration_s, rtol=0, atol=1e-9):
            raise CoverageError(f"spans end at {prev_end}, clip lasts {self.duration_s}")

    @property
    def is_empty(self) -> bool:
        return not self.spans

    @classmethod
    def empty(cls, frame_hop_s: float, duration_s: float) -> "DetectionTimeline":
        return cls((), frame_hop_s, duration_s)

    @classmethod
    def from_cells(cls, boundaries, labels, scores, frame_hop_s: float, duration_s: float):
        """Merge per-cell decisions into spans.

        ``boundaries`` holds the interior cell edges (len(labels) - 1 of
        them); the first cell starts at 0 and the last ends at the clip
        duration. A span's score is the mean of its cells' scores.
        """
        labels = np.asarray(labels, dtype=int)
        scores = np.asarray(scores, dtype=np.float64)
        if labels.size == 0:
            return cls.empty(frame_hop_s, duration_s)
        edges = np.concatenate([[0.0], np.asarray(boundaries, dtype=np.float64), [duration_s]])
        change = np.flatnonzero(np.diff(labels)) + 1
        starts = np.concatenate([[0], change])
        stops = np.concatenate([change, [labels.size]])
        spans = tuple(
            Span(float(edges[a]), float(edges[b]), int(labels[a]), float(scores[a:b].mean()))
            for a, b in zip(starts, stops)
        )
        return cls(spans, frame_hop_s, duration_s)

    @classmethod
    def from_label_spans(cls, spans, positive_label: str, frame_hop_s: float, duration_s: float):
        """Ground truth from manifest spans ``[(start, end, label_text), ...]``."""
        out = []
        for start, end, text in spans:
            lab = POSITIVE if text == positive_label else NEGATIVE
            out.append(Span(float(start), float(end), lab, float(lab)))
        return cls(tuple(out), frame_hop_s, duration_s)

    def frame_rows(self):
        """(center time, label, score) for every hop-aligned frame."""
        n = n_grid_frames(self.duration_s, self.frame_hop_s) if self.spans else 0
        centers = (np.arange(n) + 0.5) * self.frame_hop_s
        idx = _span_index(self, centers)
        return [(float(t), self.spans[i].label, self.spans[i].score) for t, i in zip(centers, idx)]

    def to_csv(self, path, config_hash: str | None = None) -> None:
        with open(path, "w", newline="") as fh:
            if config_hash:
                fh.write(f"# config_hash={config_hash}\n")
            w = csv.writer(fh)
            w.writerow(["time_s", "label", "score"])
            for t, lab, score in self.frame_rows():
                w.writerow([f"{t:.3f}", lab, f"{score:.6f}"])


def n_grid_frames(duration_s: float, hop_s: float) -> int:
    return int(np.floor(duration_s / hop_s + 1e-9))


def _span_index(timeline: DetectionTimeline, times: np.ndarray) -> np.ndarray:
    # a time exactly on a boundary belongs to the later span
    starts = np.array([s.start for s in timeline.spans])
    return np.clip(np.searchsorted(starts, times, side="right") - 1, 0, len(starts) - 1)


def frame_labels(timeline: DetectionTimeline, hop_s: float, duration_s: float) -> np.ndarray:
    """Label of the span containing each hop-aligned frame center."""
    n = n_grid_frames(duration_s, hop_s)
    if n == 0:
        return np.zeros(0, dtype=int)
    if timeline.is_empty:
        raise CoverageError("timeline has no spans but the clip is non-empty")
    if timeline.duration_s + 1e-9 < n * hop_s - hop_s / 2:
        raise CoverageError(
            f"timeline covers {timeline.duration_s} s, frames extend to {n * hop_s} s"
        )
    centers = (np.arange(n) + 0.5) * hop_s
    labels = np.array([s.label for s in timeline.spans])
    return labels[_span_index(timeline, centers)]
