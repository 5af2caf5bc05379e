"""Two-mixture likelihood-ratio detector on MFCC frames.

One diagonal-covariance Gaussian mixture is fit to positive (drone) frames
and one to negative frames. A frame is positive when the log-likelihood
under the positive mixture minus that under the negative mixture exceeds
``theta``. Frame labels are then median-smoothed.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .container import read_container, write_container
from .features import FeatureMatrix
from .timeline import DetectionTimeline

log = logging.getLogger(__name__)

LOG_2PI = np.log(2.0 * np.pi)
GMM_MAGIC = b"DGGM"
GMM_VERSION = 1


class InsufficientDataError(ValueError):
    pass


class ShapeError(ValueError):
    pass


@dataclass(eq=False)
class GaussianMixture:
    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, D)
    variances: np.ndarray  # (K, D)
    # average log-likelihood at each EM iteration (before its M-step)
    trace: list = field(default_factory=list)
    converged: bool = False

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def component_log_density(self, X: np.ndarray) -> np.ndarray:
        """log w_k + log N(x; mu_k, diag var_k), shape (N, K)."""
        X = np.atleast_2d(X)
        if X.shape[1] != self.dim:
            raise ShapeError(f"frames have {X.shape[1]} dims, mixture has {self.dim}")
        prec = 1.0 / self.variances
        quad = (X ** 2) @ prec.T - 2.0 * X @ (self.means * prec).T + np.sum(self.means ** 2 * prec, axis=1)
        log_det = np.sum(np.log(self.variances), axis=1)
        with np.errstate(divide="ignore"):
            log_w = np.log(self.weights)
        return log_w - 0.5 * (self.dim * LOG_2PI + log_det + quad)

    def frame_log_likelihood(self, X: np.ndarray) -> np.ndarray:
        return logsumexp(self.component_log_density(X), axis=1)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        comp = rng.choice(self.n_components, size=n, p=self.weights)
        noise = rng.standard_normal((n, self.dim))
        return self.means[comp] + noise * np.sqrt(self.variances[comp])


def log_likelihood(model: GaussianMixture, frames: np.ndarray) -> float:
    """Total log-likelihood of ``frames``.

    Summed with ``math.fsum`` so the total is order-independent and exactly
    additive over concatenated frame sets.
    """
    return math.fsum(model.frame_log_likelihood(frames))


def kmeans_plus_plus(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        idx = rng.choice(n, p=d2 / total) if total > 0 else rng.integers(n)
        centers[j] = X[idx]
        d2 = np.minimum(d2, np.sum((X - centers[j]) ** 2, axis=1))
    return centers


def _assign(X: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d = np.sum(X ** 2, axis=1)[:, None] - 2.0 * X @ centers.T + np.sum(centers ** 2, axis=1)
    return np.argmin(d, axis=1)


def _init_params(X, k, rng, floor, lloyd_iters):
    centers = kmeans_plus_plus(X, k, rng)
    for _ in range(lloyd_iters):
        labels = _assign(X, centers)
        for j in range(k):
            members = X[labels == j]
            if len(members):
                centers[j] = members.mean(axis=0)
    labels = _assign(X, centers)
    counts = np.bincount(labels, minlength=k).astype(np.float64)
    data_var = X.var(axis=0)
    variances = np.empty_like(centers)
    for j in range(k):
        members = X[labels == j]
        variances[j] = members.var(axis=0) if len(members) > 1 else data_var
    # empty clusters still get a sliver of weight so EM can use them
    weights = np.maximum(counts, 1e-3) / np.maximum(counts, 1e-3).sum()
    return GaussianMixture(weights, centers, np.maximum(variances, floor))


def _em(X, gm: GaussianMixture, floor, max_iter, tol) -> GaussianMixture:
    n = X.shape[0]
    k = gm.n_components
    dead_streak = np.zeros(k, dtype=int)
    trace = []
    for it in range(max_iter):
        comp = gm.component_log_density(X)
        frame_ll = logsumexp(comp, axis=1)
        avg = float(frame_ll.mean())
        trace.append(avg)
        if it > 0 and avg - trace[-2] < tol:
            gm.converged = True
            break
        resp = np.exp(comp - frame_ll[:, None])
        nk = resp.sum(axis=0)
        alive = nk > 1e-10
        weights = nk / n
        means = gm.means.copy()
        variances = gm.variances.copy()
        means[alive] = (resp[:, alive].T @ X) / nk[alive, None]
        for j in np.flatnonzero(alive):
            diff = X - means[j]
            variances[j] = (resp[:, j] @ (diff * diff)) / nk[j]
        gm = GaussianMixture(weights, means, np.maximum(variances, floor))
        dead_streak = np.where(alive, 0, dead_streak + 1)
        for j in np.flatnonzero(dead_streak >= 2):
            gm = _reseed(X, gm, j, floor)
            dead_streak[j] = 0
    gm.trace = trace
    return gm


def _reseed(X, gm: GaussianMixture, j: int, floor) -> GaussianMixture:
    """Move a dead component onto the worst-explained frame.

    The move is kept only if it does not lower the likelihood, so EM stays
    monotone.
    """
    frame_ll = gm.frame_log_likelihood(X)
    worst = int(np.argmin(frame_ll))
    weights = gm.weights.copy()
    donor = int(np.argmax(weights))
    share = min(1.0 / X.shape[0], weights[donor] / 2)
    weights[donor] -= share
    weights[j] += share
    means = gm.means.copy()
    means[j] = X[worst]
    variances = gm.variances.copy()
    variances[j] = np.maximum(X.var(axis=0), floor)
    cand = GaussianMixture(weights, means, variances)
    if cand.frame_log_likelihood(X).sum() >= frame_ll.sum():
        log.info("re-seeded collapsed component %d at frame %d", j, worst)
        return cand
    log.info("component %d collapsed; re-seed rejected (would lower likelihood)", j)
    return gm


def fit_em(frames: np.ndarray, n_components: int = 13, seed: int = 0, *, restarts: int = 10,
           max_iter: int = 200, tol: float = 1e-4, floor_ratio: float = 1e-3,
           lloyd_iters: int = 10) -> GaussianMixture:
    """Fit a diagonal GMM by EM from k-means++ starts; best of ``restarts`` runs.

    Variances are floored at ``floor_ratio`` times the per-dimension data
    variance. Identical inputs and seed give bit-identical parameters.
    """
    X = np.asarray(frames, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] < 1:
        raise ShapeError(f"frames must be (N, D) with D >= 1, got {X.shape}")
    if X.shape[0] < n_components:
        raise InsufficientDataError(f"{X.shape[0]} frames cannot support {n_components} components")
    data_var = X.var(axis=0)
    floor = floor_ratio * np.where(data_var > 0, data_var, 1.0)
    best = None
    for child in np.random.SeedSequence(seed).spawn(restarts):
        rng = np.random.default_rng(child)
        gm = _em(X, _init_params(X, n_components, rng, floor, lloyd_iters), floor, max_iter, tol)
        if best is None or gm.trace[-1] > best.trace[-1]:
            best = gm
    return best


def smooth(labels, window: int = 5) -> np.ndarray:
    """Sliding majority vote over an odd window; edges use shrunken windows."""
    labels = np.asarray(labels, dtype=int)
    if window < 1 or window % 2 == 0:
        raise ValueError(f"smoothing window must be odd and >= 1, got {window}")
    if window == 1 or labels.size == 0:
        return labels.copy()
    half = window // 2
    csum = np.concatenate([[0], np.cumsum(labels)])
    idx = np.arange(labels.size)
    lo = np.maximum(idx - half, 0)
    hi = np.minimum(idx + half + 1, labels.size)
    ones = csum[hi] - csum[lo]
    count = hi - lo
    out = (2 * ones > count).astype(int)
    # even-sized edge windows can tie; keep the original label then
    tie = 2 * ones == count
    out[tie] = labels[tie]
    return out


@dataclass(eq=False)
class GmmDetector:
    positive: GaussianMixture
    negative: GaussianMixture
    theta: float = 0.0
    smoothing_window: int = 5
    # frames summed into each decision; 1 means per-frame
    aggregation_frames: int = 1
    feature_config: dict | None = None

    def __post_init__(self):
        if self.positive.dim != self.negative.dim:
            raise ShapeError("positive and negative mixtures differ in dimension")
        if self.smoothing_window < 1 or self.smoothing_window % 2 == 0:
            raise ValueError("smoothing_window must be odd and >= 1")
        if self.aggregation_frames < 1:
            raise ValueError("aggregation_frames must be >= 1")

    @property
    def dim(self) -> int:
        return self.positive.dim

    def scores(self, frames: np.ndarray) -> np.ndarray:
        """Per-frame L1 - L2 (centred sums when aggregating several frames)."""
        llr = self.positive.frame_log_likelihood(frames) - self.negative.frame_log_likelihood(frames)
        if self.aggregation_frames > 1 and llr.size:
            llr = np.convolve(llr, np.ones(self.aggregation_frames), mode="same")
        return llr

    def decide(self, scores: np.ndarray) -> np.ndarray:
        return smooth((scores > self.theta).astype(int), self.smoothing_window)


def train_detector(positive_frames, negative_frames, n_components: int = 13, seed: int = 0,
                   theta: float = 0.0, smoothing_window: int = 5, **fit_kw) -> GmmDetector:
    pos = fit_em(positive_frames, n_components, seed, **fit_kw)
    neg = fit_em(negative_frames, n_components, seed + 1, **fit_kw)
    return GmmDetector(pos, neg, theta, smoothing_window)


def classify(detector: GmmDetector, features: FeatureMatrix) -> DetectionTimeline:
    if features.kind != "mfcc":
        raise ValueError(f"GMM detector needs mfcc features, got {features.kind}")
    hop = features.hop_s
    if features.n_frames == 0:
        return DetectionTimeline.empty(hop, features.duration_s)
    if features.frames.shape[1] != detector.dim:
        raise ShapeError(f"features have {features.frames.shape[1]} dims, detector expects {detector.dim}")
    scores = detector.scores(features.frames)
    labels = detector.decide(scores)
    # frame i owns [t_i, t_i + hop); the last frame runs to the end of the clip
    return DetectionTimeline.from_cells(features.frame_times[1:], labels, scores, hop, features.duration_s)


def calibrate_threshold(detector: GmmDetector, frame_sets, truth_sets, n_candidates: int = 201) -> float:
    """Pick theta maximising pooled frame F-score over validation data."""
    from .evaluation import f_score_counts

    scores = [detector.scores(f) for f in frame_sets]
    pooled = np.concatenate(scores)
    cands = np.unique(np.quantile(pooled, np.linspace(0.0, 1.0, n_candidates)))
    cands = np.concatenate([[0.0], cands])
    best_theta, best_f = detector.theta, -1.0
    for theta in cands:
        tp = fp = fn = 0
        for s, truth in zip(scores, truth_sets):
            pred = smooth((s > theta).astype(int), detector.smoothing_window)
            tp += int(np.sum((pred == 1) & (truth == 1)))
            fp += int(np.sum((pred == 1) & (truth == 0)))
            fn += int(np.sum((pred == 0) & (truth == 1)))
        f = f_score_counts(tp, fp, fn)
        if f > best_f:
            best_theta, best_f = float(theta), f
    return best_theta


# --- persistence -----------------------------------------------------------

def _mixture_dict(gm: GaussianMixture) -> dict:
    return {"weights": gm.weights.tolist(), "means": gm.means.tolist(), "variances": gm.variances.tolist()}


def save_detector(det: GmmDetector, path, extra_header: dict | None = None) -> None:
    header = {
        "model": "gmm",
        "K": det.positive.n_components,
        "K_negative": det.negative.n_components,
        "D": det.dim,
        "theta": det.theta,
        "smoothing_window": det.smoothing_window,
        "aggregation_frames": det.aggregation_frames,
        "feature_config": det.feature_config,
        **(extra_header or {}),
    }
    arrays = {}
    for tag, gm in (("pos", det.positive), ("neg", det.negative)):
        arrays[f"{tag}_weights"] = gm.weights
        arrays[f"{tag}_means"] = gm.means
        arrays[f"{tag}_variances"] = gm.variances
    write_container(path, GMM_MAGIC, GMM_VERSION, header, arrays)


def load_detector(path) -> tuple[GmmDetector, dict]:
    _, header, arrays = read_container(path, GMM_MAGIC, (GMM_VERSION,))
    mixtures = [
        GaussianMixture(arrays[f"{t}_weights"], arrays[f"{t}_means"], arrays[f"{t}_variances"])
        for t in ("pos", "neg")
    ]
    det = GmmDetector(*mixtures, header["theta"], header["smoothing_window"],
                      header["aggregation_frames"], header.get("feature_config"))
    return det, header


def detector_to_json(det: GmmDetector) -> str:
    return json.dumps(
        {
            "theta": det.theta,
            "smoothing_window": det.smoothing_window,
            "aggregation_frames": det.aggregation_frames,
            "positive": _mixture_dict(det.positive),
            "negative": _mixture_dict(det.negative),
        },
        indent=1,
        sort_keys=True,
    )
