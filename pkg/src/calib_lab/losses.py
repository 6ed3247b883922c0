"""Confidence-penalty objectives: CE, Brier, entropy regularizer, label smoothing.

All functions take probability rows ``probs`` of shape (B, K) (a single
K-vector is treated as a batch of one) and return the batch-mean as a scalar
:class:`~calib_lab.autodiff.Tensor`, so they can be differentiated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

BASES = ("ce", "brier")


@dataclass(frozen=True)
class LossSpec:
    base: str = "ce"
    erl_beta: float = 0.0
    ls_epsilon: float = 0.0

    def __post_init__(self):
        if self.base not in BASES:
            raise ValueError(f"base must be one of {BASES}, got {self.base!r}")
        if self.erl_beta < 0:
            raise ValueError("erl_beta must be >= 0")
        if not 0.0 <= self.ls_epsilon < 1.0:
            raise ValueError("ls_epsilon must be in [0, 1)")

    @property
    def name(self) -> str:
        parts = ["BL" if self.base == "brier" else "CE"]
        if self.erl_beta:
            parts.append("ERL")
        if self.ls_epsilon:
            parts.append("LS")
        return "+".join(parts)


def _rows(probs) -> Tensor:
    probs = ad.as_tensor(probs)
    if probs.ndim == 1:
        probs = probs.reshape(1, -1)
    return probs


def _target_rows(target, k: int) -> np.ndarray:
    target = np.asarray(target, dtype=np.float64)
    if target.ndim == 1:
        target = target[None, :]
    if target.shape[-1] != k:
        raise ValueError(f"target has {target.shape[-1]} classes, predictions have {k}")
    return target


def one_hot(labels, k: int) -> np.ndarray:
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"label out of range [0, {k})")
    out = np.zeros((labels.size, k))
    out[np.arange(labels.size), labels] = 1.0
    return out


def label_smooth(labels, k: int, epsilon: float) -> np.ndarray:
    """(1 - eps) * onehot(y) + eps / K for each label (0-based)."""
    if not 0.0 <= epsilon < 1.0:
        raise ValueError("epsilon must be in [0, 1)")
    return (1.0 - epsilon) * one_hot(labels, k) + epsilon / k


def cross_entropy(probs, target) -> Tensor:
    """Mean over rows of -sum_k target_k log p_k (log floored at 1e-12)."""
    probs = _rows(probs)
    t = _target_rows(target, probs.shape[-1])
    return -(ad.log(probs) * t).sum(axis=-1).mean()


def brier(probs, target) -> Tensor:
    """Mean over rows of sum_k (p_k - target_k)^2; not divided by K."""
    probs = _rows(probs)
    diff = probs - _target_rows(target, probs.shape[-1])
    return (diff * diff).sum(axis=-1).mean()


def entropy_penalty(probs) -> Tensor:
    """Mean over rows of sum_k p_k log p_k, i.e. minus the entropy."""
    probs = _rows(probs)
    return (probs * ad.log(probs)).sum(axis=-1).mean()


def _base_loss(spec: LossSpec, probs: Tensor, labels) -> Tensor:
    target = label_smooth(labels, probs.shape[-1], spec.ls_epsilon)
    fn = brier if spec.base == "brier" else cross_entropy
    return fn(probs, target)


def composite_loss(spec: LossSpec, probs, labels=None, *, target=None, mix=None) -> Tensor:
    """Base loss (optionally smoothed) plus ``erl_beta`` * entropy penalty.

    Exactly one of:
      * ``labels`` -- hard integer labels, smoothed by ``spec.ls_epsilon``;
      * ``target`` -- an explicit target distribution (no further smoothing);
      * ``mix`` -- ``(labels_i, labels_j, lam)``: lam * base(y_i) + (1 - lam) * base(y_j).
    """
    given = sum(x is not None for x in (labels, target, mix))
    if given != 1:
        raise ValueError("supply exactly one of labels, target, mix")
    probs = _rows(probs)
    if labels is not None:
        loss = _base_loss(spec, probs, labels)
    elif target is not None:
        fn = brier if spec.base == "brier" else cross_entropy
        loss = fn(probs, target)
    else:
        y_i, y_j, lam = mix
        if not 0.0 <= lam <= 1.0:
            raise ValueError("mixing weight must be in [0, 1]")
        if lam == 1.0:
            loss = _base_loss(spec, probs, y_i)
        elif lam == 0.0:
            loss = _base_loss(spec, probs, y_j)
        else:
            loss = _base_loss(spec, probs, y_i) * lam + _base_loss(spec, probs, y_j) * (1.0 - lam)
    if spec.erl_beta:
        loss = loss + entropy_penalty(probs) * spec.erl_beta
    return loss
