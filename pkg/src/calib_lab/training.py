"""Optimizer, learning-rate schedule and the epoch loop.

The loop is model-agnostic: callers hand :func:`fit` a ``step`` callable that
computes a loss and back-propagates it, and an ``evaluate`` callable that maps
token lists to member probabilities of shape (M, N, K).
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .augment import AugmentPolicy, SynonymLexicon, augment_words, example_rng, mixup_pair, sample_mixup_lambda
from .data import Example, Vocabulary, pad_batch, tokenize
from .losses import LossSpec, composite_loss
from .metrics import accuracy, disagreement, ece, nll, weight_norm
from .model import TransformerClassifier

# stream ids mixed into each seed's SeedSequence
INIT, SHUFFLE, DROPOUT, MIXUP, MIMO, MC = range(6)


def stream(seed: int, kind: int) -> np.random.Generator:
    return np.random.default_rng([seed, kind])


@dataclass
class OptimConfig:
    lr: float = 1e-3
    weight_decay: float = 0.01
    warmup_proportion: float = 0.1
    batch_size: int = 16
    epochs: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not 0.0 <= self.warmup_proportion < 1.0:
            raise ValueError("warmup_proportion must be in [0, 1)")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, ad.Parameter], state: AdamState, lr: float, hp: OptimConfig) -> None:
    """One bias-corrected Adam update with decoupled weight decay.

    Decay (``lr * weight_decay * w``) applies to matrices and embedding tables
    only; biases and layer-norm affines are not decayed.
    """
    state.step += 1
    t = state.step
    c1 = 1.0 - hp.beta1 ** t
    c2 = 1.0 - hp.beta2 ** t
    for name, p in params.items():
        if not p.trainable:
            continue
        g = p.grad
        if not np.all(np.isfinite(g)):
            raise ad.NonFiniteError(f"non-finite gradient for {name} at step {t}")
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        m = hp.beta1 * m + (1.0 - hp.beta1) * g
        v = hp.beta2 * state.v[name] + (1.0 - hp.beta2) * g * g
        state.m[name], state.v[name] = m, v
        update = (m / c1) / (np.sqrt(v / c2) + hp.eps)
        if hp.weight_decay and p.data.ndim >= 2:
            update = update + hp.weight_decay * p.data
        p.data = p.data - lr * update


def lr_schedule(step: int, total_steps: int, warmup_proportion: float, base_lr: float) -> float:
    """Linear warmup from 0 to ``base_lr``, then linear decay to 0 at ``total_steps``."""
    if total_steps <= 0:
        raise ValueError("total_steps must be positive")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    warmup = warmup_proportion * total_steps
    if step < warmup:
        return base_lr * step / warmup
    return base_lr * (total_steps - step) / (total_steps - warmup)


class TrainingSet:
    """Training examples plus on-the-fly augmentation and tokenization."""

    def __init__(self, examples: Sequence[Example], vocab: Vocabulary, max_len: int,
                 policy: AugmentPolicy, seed: int, lexicon: SynonymLexicon | None = None,
                 stopwords: frozenset[str] | None = None):
        self.examples = list(examples)
        self.labels = np.array([ex.label for ex in self.examples], dtype=np.int64)
        self.vocab = vocab
        self.max_len = max_len
        self.policy = policy
        self.seed = seed
        self.lexicon = lexicon
        self.stopwords = stopwords
        self._clean = [tokenize(ex.words, vocab, max_len) for ex in self.examples]
        self.digest = hashlib.sha256()

    def __len__(self) -> int:
        return len(self.examples)

    @property
    def token_augmenting(self) -> bool:
        return self.policy.kind in ("sr", "eda", "aeda")

    def words(self, i: int, epoch: int) -> list[str]:
        ex = self.examples[i]
        if not self.token_augmenting:
            return ex.words
        return augment_words(ex.words, self.policy, example_rng(self.seed, epoch, i),
                             self.lexicon, self.stopwords)

    def batch(self, idx: Sequence[int], epoch: int) -> tuple[list[list[int]], np.ndarray]:
        if not self.token_augmenting:
            return [self._clean[i] for i in idx], self.labels[np.asarray(idx)]
        seqs = []
        for i in idx:
            w = self.words(int(i), epoch)
            self.digest.update(("\x1f".join(w) + "\x1e").encode())
            seqs.append(tokenize(w, self.vocab, self.max_len))
        return seqs, self.labels[np.asarray(idx)]

    def clean_tokens(self) -> list[list[int]]:
        return self._clean


def classifier_loss(model: TransformerClassifier, tokens: np.ndarray, labels: np.ndarray,
                    spec: LossSpec, rng: np.random.Generator | None,
                    lam: float | None = None, perm: np.ndarray | None = None) -> ad.Tensor:
    """Loss of one batch; with ``lam`` set, MixUp on the pooled embeddings with pairing ``perm``."""
    if lam is None:
        return composite_loss(spec, model.forward(tokens, rng=rng), labels)
    pooled = model.encode(tokens, rng=rng)
    perm = np.arange(len(labels)) if perm is None else np.asarray(perm)
    mixed, _ = mixup_pair(pooled, pooled[perm], labels, labels[perm], lam)
    return composite_loss(spec, model.classify(mixed, rng), mix=(labels, labels[perm], lam))


def classifier_step(model: TransformerClassifier, data: TrainingSet, spec: LossSpec, seed: int,
                    mixup_alpha: float | None = None) -> Callable[[np.ndarray, int], float]:
    drop_rng = stream(seed, DROPOUT)
    mix_rng = stream(seed, MIXUP)

    def step(idx: np.ndarray, epoch: int) -> float:
        seqs, labels = data.batch(idx, epoch)
        tokens = pad_batch(seqs)
        lam = perm = None
        if mixup_alpha is not None:
            lam = float(sample_mixup_lambda(mixup_alpha, mix_rng))
            perm = mix_rng.permutation(len(labels))
        loss = classifier_loss(model, tokens, labels, spec, drop_rng, lam, perm)
        ad.backward(loss)
        return loss.item()

    return step


def predict_probs(model: TransformerClassifier, seqs: Sequence[Sequence[int]], batch_size: int = 256,
                  rng: np.random.Generator | None = None) -> np.ndarray:
    """Probabilities (N, K); dropout active only when ``rng`` is given."""
    out = []
    with ad.no_grad():
        for start in range(0, len(seqs), batch_size):
            out.append(model.forward(pad_batch(seqs[start:start + batch_size]), rng=rng).data)
    return np.concatenate(out)


@dataclass
class EvalData:
    train: list[list[int]]
    train_labels: np.ndarray
    dev: list[list[int]]
    dev_labels: np.ndarray
    test: list[list[int]]
    test_labels: np.ndarray


@dataclass
class FitResult:
    history: list[dict]
    epoch_test_probs: list[np.ndarray]
    final_state: dict[str, np.ndarray]
    best_state: dict[str, np.ndarray]
    best_epoch: int
    duration_s: float


def fit(model, step: Callable[[np.ndarray, int], float], n_train: int,
        evaluate: Callable[[object, list], np.ndarray], evals: EvalData, optim: OptimConfig,
        seed: int, data: TrainingSet | None = None) -> FitResult:
    """Train for ``optim.epochs`` epochs, evaluating after each.

    ``evaluate(model, seqs)`` returns member probabilities (M, N, K); metrics
    use their mean.  The best-dev state is the first epoch reaching the
    highest dev accuracy (the final state when there is no dev split).
    """
    started = time.perf_counter()
    shuffle_rng = stream(seed, SHUFFLE)
    steps_per_epoch = -(-n_train // optim.batch_size)
    total = steps_per_epoch * optim.epochs
    params = model.params
    state = AdamState()
    history: list[dict] = []
    epoch_test: list[np.ndarray] = []
    best_acc, best_epoch, best_state = -1.0, 0, model.state_dict()
    global_step = 0
    for epoch in range(1, optim.epochs + 1):
        order = shuffle_rng.permutation(n_train)
        losses = []
        for b in range(steps_per_epoch):
            idx = order[b * optim.batch_size:(b + 1) * optim.batch_size]
            model.zero_grad()
            losses.append(step(idx, epoch))
            lr = lr_schedule(global_step, total, optim.warmup_proportion, optim.lr)
            adam_step(params, state, lr, optim)
            global_step += 1
        record = {"epoch": epoch, "train_loss": float(np.mean(losses))}
        member_test = evaluate(model, evals.test)
        record.update(_epoch_metrics(model, evaluate, evals, member_test))
        if data is not None and data.token_augmenting:
            record["augment_digest"] = data.digest.hexdigest()
        history.append(record)
        epoch_test.append(member_test)
        dev_acc = record.get("dev_accuracy", -1.0)
        if dev_acc > best_acc:
            best_acc, best_epoch, best_state = dev_acc, epoch, model.state_dict()
    final_state = model.state_dict()
    if not evals.dev:
        best_epoch, best_state = optim.epochs, final_state
    return FitResult(history, epoch_test, final_state, best_state, best_epoch,
                     time.perf_counter() - started)


def _epoch_metrics(model, evaluate, evals: EvalData, member_test: np.ndarray) -> dict:
    test = member_test.mean(axis=0)
    rec = {
        "train_nll": nll(evaluate(model, evals.train).mean(axis=0), evals.train_labels),
        "test_nll": nll(test, evals.test_labels),
        "test_accuracy": accuracy(test, evals.test_labels),
        "test_ece": ece(test, evals.test_labels),
        "weight_norm": weight_norm(model.weight_scope("penultimate")),
    }
    if evals.dev:
        dev = evaluate(model, evals.dev).mean(axis=0)
        rec["dev_nll"] = nll(dev, evals.dev_labels)
        rec["dev_accuracy"] = accuracy(dev, evals.dev_labels)
    if member_test.shape[0] > 1:
        rec["disagreement"] = disagreement(list(member_test))
    return rec


def single_evaluator(model, seqs) -> np.ndarray:
    return predict_probs(model, seqs)[None]
