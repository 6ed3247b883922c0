"""Calibration metrics and representation diagnostics.

Probabilities are numpy arrays of shape (N, K); labels are 0-based ints.
Bins follow the ((t-1)/T, t/T] convention with confidence 0 put in bin 1.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist

PROB_FLOOR = 1e-12
DEFAULT_BINS = 15
BIN_CSV_HEADER = ("bin_lo", "bin_hi", "count", "accuracy", "confidence")


def _check(probs, labels) -> tuple[np.ndarray, np.ndarray]:
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if probs.ndim != 2:
        raise ValueError(f"probs must be (N, K), got {probs.shape}")
    if probs.shape[0] == 0:
        raise ValueError("empty prediction set")
    if labels.shape != (probs.shape[0],):
        raise ValueError(f"labels shape {labels.shape} does not match {probs.shape[0]} predictions")
    return probs, labels


def bin_index(confidence: np.ndarray, n_bins: int) -> np.ndarray:
    """0-based bin of each confidence under ((t-1)/T, t/T]."""
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    edges = np.arange(n_bins + 1) / n_bins
    idx = np.searchsorted(edges, confidence, side="left") - 1
    return np.clip(idx, 0, n_bins - 1)


@dataclass
class ReliabilityBins:
    lo: np.ndarray
    hi: np.ndarray
    count: np.ndarray
    accuracy: np.ndarray
    confidence: np.ndarray

    @property
    def n(self) -> int:
        return int(self.count.sum())

    def ece(self) -> float:
        gaps = np.abs(self.accuracy - self.confidence)
        return float((self.count * gaps).sum() / self.n)

    def rows(self) -> list[tuple]:
        return list(zip(self.lo.tolist(), self.hi.tolist(), self.count.tolist(),
                        self.accuracy.tolist(), self.confidence.tolist()))

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(BIN_CSV_HEADER)
            writer.writerows(self.rows())
        return path


def reliability_bins_from_confidence(confidence, correct, n_bins: int = DEFAULT_BINS) -> ReliabilityBins:
    confidence = np.asarray(confidence, dtype=np.float64)
    correct = np.asarray(correct, dtype=np.float64)
    if confidence.size == 0:
        raise ValueError("empty prediction set")
    idx = bin_index(confidence, n_bins)
    count = np.bincount(idx, minlength=n_bins)
    safe = np.maximum(count, 1)
    acc = np.bincount(idx, weights=correct, minlength=n_bins) / safe
    conf = np.bincount(idx, weights=confidence, minlength=n_bins) / safe
    edges = np.arange(n_bins + 1) / n_bins
    return ReliabilityBins(edges[:-1], edges[1:], count, acc, conf)


def reliability_bins(probs, labels, n_bins: int = DEFAULT_BINS) -> ReliabilityBins:
    probs, labels = _check(probs, labels)
    return reliability_bins_from_confidence(probs.max(axis=1), probs.argmax(axis=1) == labels, n_bins)


def ece(probs, labels, n_bins: int = DEFAULT_BINS) -> float:
    """Expected calibration error with ``n_bins`` equal-width bins."""
    return reliability_bins(probs, labels, n_bins).ece()


def accuracy(probs, labels) -> float:
    probs, labels = _check(probs, labels)
    return float((probs.argmax(axis=1) == labels).mean())


def nll(probs, labels) -> float:
    probs, labels = _check(probs, labels)
    p_true = probs[np.arange(labels.size), labels]
    return float(-np.log(np.maximum(p_true, PROB_FLOOR)).mean())


def brier_score(probs, labels) -> float:
    probs, labels = _check(probs, labels)
    diff = probs.copy()
    diff[np.arange(labels.size), labels] -= 1.0
    return float((diff * diff).sum(axis=1).mean())


def disagreement(member_predictions: Sequence[np.ndarray]) -> float:
    """Mean over member pairs of the fraction of differing argmax predictions.

    Accepts per-member probability arrays (N, K) or label vectors (N,).
    """
    preds = [np.asarray(p) for p in member_predictions]
    if len(preds) < 2:
        raise ValueError("disagreement needs at least two members")
    preds = [p.argmax(axis=-1) if p.ndim == 2 else p for p in preds]
    if len({p.shape for p in preds}) != 1:
        raise ValueError("members were evaluated on different sets")
    pairs = [(preds[i] != preds[j]).mean() for i in range(len(preds)) for j in range(i + 1, len(preds))]
    return float(np.mean(pairs))


def hausdorff_euclidean(set_a, set_b, variant: str = "max") -> float:
    """Symmetric Hausdorff distance between two point sets.

    ``variant="max"`` is the classical max of directed max-min distances;
    ``variant="average"`` averages the two directed mean-min distances.
    """
    a = np.atleast_2d(np.asarray(set_a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(set_b, dtype=np.float64))
    if a.size == 0 or b.size == 0:
        raise ValueError("hausdorff_euclidean needs non-empty sets")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    d = cdist(a, b)
    if variant == "max":
        return float(max(d.min(axis=1).max(), d.min(axis=0).max()))
    if variant == "average":
        return float(0.5 * (d.min(axis=1).mean() + d.min(axis=0).mean()))
    raise ValueError(f"unknown variant {variant!r}")


def weight_norm(parameters) -> float:
    """L2 norm of the concatenation of the given arrays/Parameters."""
    arrays = [np.asarray(getattr(p, "data", p), dtype=np.float64).ravel() for p in parameters]
    if not arrays:
        raise ValueError("empty parameter scope")
    return float(np.sqrt(sum(float(a @ a) for a in arrays)))


@dataclass
class EvalReport:
    """Raw metrics plus the x100 presentation fields used in result tables."""

    accuracy: float
    ece: float
    nll: float
    brier: float
    n: int

    @property
    def accuracy_pct(self) -> float:
        return 100.0 * self.accuracy

    @property
    def ece_x100(self) -> float:
        return 100.0 * self.ece

    @property
    def nll_x100(self) -> float:
        return 100.0 * self.nll

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(probs, labels, n_bins: int = DEFAULT_BINS) -> EvalReport:
    probs, labels = _check(probs, labels)
    return EvalReport(
        accuracy=accuracy(probs, labels),
        ece=ece(probs, labels, n_bins),
        nll=nll(probs, labels),
        brier=brier_score(probs, labels),
        n=int(labels.size),
    )
