"""Regression criteria and the chunked inception score."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DomainError, InputError, TrainingError
from .nn import cross_entropy, softmax
from .nn import checkpoint
from .nn.layers import Conv2D, Dense, Flatten, MaxPool2D, ReLU, Sequential
from .nn.optim import AdamState, adam_step


@dataclass
class MetricsReport:
    r2: float
    raae: float
    rmae: float
    error_pct: float
    degenerate: bool = False

    def rows(self):
        return [("r2", self.r2), ("raae", self.raae), ("rmae", self.rmae),
                ("error_pct", self.error_pct)]


def regression_metrics(labels, preds) -> MetricsReport:
    """R^2, RAAE, RMAE (absolute deviations, n-1 STD) and relative L2 error in percent.

    Zero label spread gives a ``degenerate`` report with NaN for the three
    STD/variance-based criteria.
    """
    y = np.asarray(labels, dtype=np.float64).ravel()
    yh = np.asarray(preds, dtype=np.float64).ravel()
    if y.size == 0 or y.size != yh.size:
        raise InputError("labels and preds need equal, non-zero lengths")
    resid = y - yh
    norm_y = np.linalg.norm(y)
    error_pct = float(np.linalg.norm(resid) / norm_y * 100.0) if norm_y > 0 else (
        0.0 if not resid.any() else math.inf)
    std = float(np.std(y, ddof=1)) if y.size > 1 else 0.0
    if std == 0.0:
        return MetricsReport(math.nan, math.nan, math.nan, error_pct, degenerate=True)
    ss_res = float(np.sum(resid ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    return MetricsReport(
        r2=1.0 - ss_res / ss_tot,
        raae=float(np.sum(np.abs(resid)) / (y.size * std)),
        rmae=float(np.max(np.abs(resid)) / std),
        error_pct=error_pct,
    )


@dataclass
class InceptionResult:
    mean_score: float
    std_score: float
    n_splits: int
    scores: tuple = ()


def _check_probs(probs):
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 2:
        raise InputError("probability rows must form an (N, C) array")
    if p.shape[1] < 2:
        raise DomainError("inception score needs at least two classes")
    if np.any(p < 0) or np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-9):
        raise InputError("every probability row must be non-negative and sum to 1 within 1e-9")
    return p


def _chunk_score(p):
    # shifted mean: identical rows reproduce their marginal bit for bit
    marginal = p[0] + (p - p[0]).mean(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * (np.log(p) - np.log(marginal)), 0.0)
    return math.exp(float(terms.sum(axis=1).mean()))


def inception_score(probs, n_splits: int = 10) -> InceptionResult:
    """exp(mean KL(p(y|x) || p(y))) over contiguous chunks; mean and std across chunks."""
    p = _check_probs(probs)
    n = len(p)
    if n_splits < 1 or n < n_splits:
        raise DomainError(f"need N >= n_splits >= 1 (N={n}, n_splits={n_splits})")
    size = n // n_splits
    if size * n_splits != n:
        warnings.warn(f"dropping {n - size * n_splits} trailing rows to form equal chunks",
                      RuntimeWarning)
    scores = [_chunk_score(p[i * size:(i + 1) * size]) for i in range(n_splits)]
    return InceptionResult(float(np.mean(scores)), float(np.std(scores)), n_splits, tuple(scores))


def quantile_bins(values, n_bins: int) -> np.ndarray:
    """Inner bin edges at the 1/n .. (n-1)/n quantiles."""
    if n_bins < 2:
        raise DomainError("need at least two bins")
    return np.quantile(np.asarray(values, dtype=np.float64), np.arange(1, n_bins) / n_bins)


class ObjectiveClassifier:
    """Small conv net over images; classes are objective quantile bins."""

    def __init__(self, net: Sequential, edges):
        self.net, self.edges = net, np.asarray(edges, dtype=np.float64)

    @classmethod
    def create(cls, image_shape, n_bins, edges=None, seed=0):
        layers = [Conv2D(8, 3), ReLU(), MaxPool2D(2), Conv2D(16, 3), ReLU(), MaxPool2D(2),
                  Flatten(), Dense(n_bins)]
        return cls(Sequential(layers, image_shape, seed=seed),
                   edges if edges is not None else np.zeros(n_bins - 1))

    @property
    def n_classes(self) -> int:
        return len(self.edges) + 1

    def labels_of(self, objectives) -> np.ndarray:
        return np.searchsorted(self.edges, np.asarray(objectives, dtype=np.float64), side="right")

    def predict_proba(self, images, batch: int = 64) -> np.ndarray:
        images = np.asarray(images, dtype=np.float64)
        out = [softmax(self.net(images[i:i + batch])) for i in range(0, len(images), batch)]
        return np.concatenate(out) if out else np.zeros((0, self.n_classes))

    def accuracy(self, images, objectives) -> float:
        return float(np.mean(self.predict_proba(images).argmax(axis=1) == self.labels_of(objectives)))

    def save(self, path, extra=None):
        head, arrays = checkpoint.model_entry("classifier", self.net)
        arrays["edges"] = self.edges
        return checkpoint.save(path, {"model": "classifier", "net": head, **(extra or {})}, arrays)

    @classmethod
    def load(cls, path):
        head, arrays = checkpoint.load(path)
        net = Sequential.from_specs(head["net"]["specs"], head["net"]["in_shape"])
        net.load_arrays(*checkpoint.restore_arrays("classifier", arrays))
        return cls(net, arrays["edges"])


def train_classifier(images, objectives, n_bins=8, epochs=4, batch=32, lr=1e-3, seed=0,
                     log=None) -> ObjectiveClassifier:
    """Fit the objective-bin classifier behind :func:`inception_score` probabilities."""
    images = np.asarray(images, dtype=np.float64)
    if len(images) == 0:
        raise TrainingError("empty dataset")
    clf = ObjectiveClassifier.create(images.shape[1:], n_bins, quantile_bins(objectives, n_bins), seed)
    labels = clf.labels_of(objectives)
    params = clf.net.parameters()
    opt = AdamState.for_params(params, eps_lr=lr)
    rng = np.random.default_rng(seed + 3)
    for epoch in range(epochs):
        perm = rng.permutation(len(images))
        total = 0.0
        for s in range(0, len(perm), batch):
            idx = perm[s:s + batch]
            logits, cache = clf.net.forward(images[idx], True)
            loss, d = cross_entropy(logits, labels[idx])
            if not np.isfinite(loss):
                raise TrainingError("classifier loss became non-finite", checkpoint=clf)
            _, grads = clf.net.backward(cache, d)
            adam_step(opt, params, grads)
            total += loss * len(idx)
        if log:
            log(f"classifier epoch {epoch + 1}/{epochs} loss {total / len(images):.6g}")
    return clf


def classifier_for_is(classifier: ObjectiveClassifier, images) -> np.ndarray:
    """Class-probability rows of ``images`` for :func:`inception_score`."""
    return classifier.predict_proba(images)


def seed_noise_images(n: int, shape, seed: int = 0) -> np.ndarray:
    """Uniform random pixels: the reference floor for the inception score."""
    return np.random.default_rng(seed).random((n,) + tuple(shape))


def write_metrics_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "value"])
        for name, value in rows:
            w.writerow([name, repr(float(value))])


def read_metrics_csv(path) -> dict:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        next(r)
        return {k: float(v) for k, v in r}


def write_predictions_csv(path, ids, labels, preds) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "label", "pred"])
        for i, y, yh in zip(ids, labels, preds):
            w.writerow([i, repr(float(y)), repr(float(yh))])


def read_predictions_csv(path) -> tuple[list, np.ndarray, np.ndarray]:
    with open(Path(path), newline="") as fh:
        r = csv.reader(fh)
        next(r)
        rows = list(r)
    return ([row[0] for row in rows], np.array([float(row[1]) for row in rows]),
            np.array([float(row[2]) for row in rows]))


def read_probability_csv(path) -> np.ndarray:
    """Rows of class probabilities; a header line of column names is skipped."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if rows and not _is_number(rows[0][0]):
        rows = rows[1:]
    return np.array([[float(v) for v in row] for row in rows])


def _is_number(s):
    try:
        float(s)
    except ValueError:
        return False
    return True
