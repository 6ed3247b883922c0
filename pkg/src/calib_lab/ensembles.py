"""Deep Ensemble, MC Dropout and MIMO protocols.

Every protocol ends in :class:`EnsemblePrediction`: the member probability
rows and their arithmetic mean.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .augment import mixup_pair, sample_mixup_lambda
from .data import pad_batch
from .losses import LossSpec, composite_loss
from .model import EncoderConfig, MimoClassifier, TransformerClassifier
from .training import (
    DROPOUT, INIT, MC, MIMO, MIXUP, EvalData, FitResult, OptimConfig, TrainingSet,
    classifier_step, fit, predict_probs, single_evaluator, stream,
)

log = logging.getLogger(__name__)

KINDS = ("single", "deep-ensemble", "mc-dropout", "mimo")
DE_INIT = ("independent", "shared-body")
_MEMBER_SEED_STRIDE = 7919


@dataclass
class EnsembleConfig:
    kind: str = "single"
    members: int = 1
    mc_dropout_rate: float | None = None
    mimo_repetition_p: float = 0.2
    member_seeds: list[int] | None = None
    de_init: str = "independent"
    share_heads: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"ensemble kind must be one of {KINDS}, got {self.kind!r}")
        if self.members < 1:
            raise ValueError("members must be >= 1")
        if not 0.0 <= self.mimo_repetition_p <= 1.0:
            raise ValueError("mimo_repetition_p must be in [0, 1]")
        if self.mc_dropout_rate is not None and not 0.0 <= self.mc_dropout_rate < 1.0:
            raise ValueError("mc_dropout_rate must be in [0, 1)")
        if self.de_init not in DE_INIT:
            raise ValueError(f"de_init must be one of {DE_INIT}")
        if self.member_seeds is not None and self.kind == "deep-ensemble" \
                and len(self.member_seeds) != self.members:
            raise ValueError("member_seeds must list one seed per member")

    def seeds_for(self, seed: int) -> list[int]:
        """Member seeds; member 0 reuses the run seed so M=1 matches single training."""
        if self.member_seeds is not None:
            return list(self.member_seeds)
        return [seed + _MEMBER_SEED_STRIDE * m for m in range(self.members)]


@dataclass
class EnsemblePrediction:
    member_probs: np.ndarray  # (M, N, K)
    probs: np.ndarray  # (N, K)

    @property
    def members(self) -> int:
        return self.member_probs.shape[0]


def predict_average(member_probs: Sequence[np.ndarray]) -> EnsemblePrediction:
    """Arithmetic mean of member probability rows."""
    arrays = [np.asarray(p, dtype=np.float64) for p in member_probs]
    if not arrays:
        raise ValueError("no member predictions")
    if len({a.shape for a in arrays}) != 1:
        raise ValueError(f"member outputs differ in shape: {sorted({a.shape for a in arrays})}")
    stacked = np.stack(arrays)
    return EnsemblePrediction(stacked, stacked.mean(axis=0))


def predict_members(models: Sequence[TransformerClassifier], seqs) -> EnsemblePrediction:
    return predict_average([predict_probs(m, seqs) for m in models])


def mc_dropout_predict(model: TransformerClassifier, seqs, members: int, rate: float | None,
                       rng: np.random.Generator) -> EnsemblePrediction:
    """``members`` stochastic passes with dropout at ``rate`` (model rate if None)."""
    if members < 1:
        raise ValueError("members must be >= 1")
    rate = model.config.dropout_rate if rate is None else rate
    if not 0.0 <= rate < 1.0:
        raise ValueError("dropout rate must be in [0, 1)")
    saved = model.dropout_rate
    model.dropout_rate = rate
    try:
        return predict_average([predict_probs(model, seqs, rng=rng) for _ in range(members)])
    finally:
        model.dropout_rate = saved


def mimo_predict(model: MimoClassifier, seqs, batch_size: int = 256) -> EnsemblePrediction:
    """Repeat each input to every member and average the member outputs."""
    chunks = []
    with ad.no_grad():
        for start in range(0, len(seqs), batch_size):
            members, _ = model.forward(pad_batch(seqs[start:start + batch_size]))
            chunks.append(np.stack([p.data for p in members]))
    return predict_average(list(np.concatenate(chunks, axis=1)))


def mimo_member_batches(base_idx: np.ndarray, n_train: int, members: int, p: float,
                        rng: np.random.Generator) -> list[np.ndarray]:
    """With probability ``p`` every member gets ``base_idx``; otherwise members
    after the first get independently sampled batches of the same size."""
    if rng.random() < p:
        return [base_idx] * members
    size = len(base_idx)
    return [base_idx] + [rng.choice(n_train, size=size, replace=size > n_train) for _ in range(members - 1)]


def mimo_train_step(model: MimoClassifier, data: TrainingSet, base_idx: np.ndarray, epoch: int,
                    p: float, spec: LossSpec, rng: np.random.Generator, drop_rng: np.random.Generator | None,
                    mixup_alpha: float | None = None, mix_rng: np.random.Generator | None = None) -> float:
    """Sum over members of the loss on each member's own batch; back-propagates it."""
    member_idx = mimo_member_batches(base_idx, len(data), model.members, p, rng)
    batches = [data.batch(idx, epoch) for idx in member_idx]
    length = max(len(s) for seqs, _ in batches for s in seqs)
    tokens = [pad_batch(seqs, length) for seqs, _ in batches]
    pooled = model.encode(tokens, rng=drop_rng)
    lam = None
    if mixup_alpha is not None:
        lam = float(sample_mixup_lambda(mixup_alpha, mix_rng))
    total = None
    for m, (z, (_, labels)) in enumerate(zip(pooled, batches)):
        if lam is None:
            loss = composite_loss(spec, model.classify(m, z, drop_rng), labels)
        else:
            perm = mix_rng.permutation(len(labels))
            mixed, _ = mixup_pair(z, z[perm], labels, labels[perm], lam)
            loss = composite_loss(spec, model.classify(m, mixed, drop_rng), mix=(labels, labels[perm], lam))
        total = loss if total is None else total + loss
    ad.backward(total)
    return total.item()


def mimo_evaluator(model: MimoClassifier, seqs) -> np.ndarray:
    return mimo_predict(model, seqs).member_probs


def mc_evaluator(members: int, rate: float | None, seed: int) -> Callable:
    def evaluate(model, seqs):
        return mc_dropout_predict(model, seqs, members, rate, stream(seed, MC)).member_probs
    return evaluate


def fit_mimo(config: EncoderConfig, ens: EnsembleConfig, data: TrainingSet, evals: EvalData,
             optim: OptimConfig, spec: LossSpec, seed: int,
             mixup_alpha: float | None = None) -> tuple[MimoClassifier, FitResult]:
    model = MimoClassifier(config, ens.members, seed=stream(seed, INIT), share_heads=ens.share_heads)
    mimo_rng, drop_rng, mix_rng = stream(seed, MIMO), stream(seed, DROPOUT), stream(seed, MIXUP)

    def step(idx, epoch):
        return mimo_train_step(model, data, idx, epoch, ens.mimo_repetition_p, spec,
                               mimo_rng, drop_rng, mixup_alpha, mix_rng)

    return model, fit(model, step, len(data), mimo_evaluator, evals, optim, seed, data)


def init_member(config: EncoderConfig, ens: EnsembleConfig, run_seed: int, member_seed: int) -> TransformerClassifier:
    """Fresh member weights; in shared-body mode only the head depends on ``member_seed``."""
    if ens.de_init == "shared-body":
        model = TransformerClassifier(config, seed=stream(run_seed, INIT))
        model.reinit_heads(stream(member_seed, INIT))
        return model
    return TransformerClassifier(config, seed=stream(member_seed, INIT))


def train_deep_ensemble(config: EncoderConfig, ens: EnsembleConfig, make_data: Callable[[int], TrainingSet],
                        evals: EvalData, optim: OptimConfig, spec: LossSpec, seed: int,
                        mixup_alpha: float | None = None,
                        evaluator: Callable = single_evaluator) -> list[tuple[TransformerClassifier, FitResult]]:
    """Train ``ens.members`` models independently.

    ``make_data(member_seed)`` builds each member's training set, so
    augmentation, shuffling and dropout all follow the member's own seed.
    """
    seeds = ens.seeds_for(seed)
    if len(set(seeds)) != len(seeds):
        warnings.warn("deep ensemble has duplicate member seeds; those members will be identical")
    out = []
    for member_seed in seeds:
        model = init_member(config, ens, seed, member_seed)
        data = make_data(member_seed)
        step = classifier_step(model, data, spec, member_seed, mixup_alpha)
        out.append((model, fit(model, step, len(data), evaluator, evals, optim, member_seed, data)))
    return out
