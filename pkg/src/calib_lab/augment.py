"""Word-level text augmentations (SR, EDA, AEDA) and embedding MixUp.

Token-level functions take a list of words and a ``numpy.random.Generator``
and return a new list; the input is never modified.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad

PUNCTUATION = (".", ",", "!", "?", ";", ":")
KINDS = ("none", "sr", "eda", "aeda", "mixup")
EDA_OPS = ("sr", "ri", "rs", "rd")
_AUG_STREAM = 0xA06


class SynonymLexicon:
    """Case-normalized word -> synonyms map."""

    def __init__(self, entries: dict[str, Sequence[str]] | None = None):
        self._map: dict[str, list[str]] = {}
        for word, syns in (entries or {}).items():
            syns = [s.strip().lower() for s in syns if s.strip()]
            if not syns:
                raise ValueError(f"lexicon entry {word!r} has no synonyms")
            self._map[word.strip().lower()] = syns

    def __contains__(self, word: str) -> bool:
        return word.lower() in self._map

    def __len__(self) -> int:
        return len(self._map)

    def synonyms(self, word: str) -> list[str]:
        return self._map.get(word.lower(), [])

    def all_synonyms(self) -> set[str]:
        return {s for syns in self._map.values() for s in syns}

    @classmethod
    def from_tsv(cls, path) -> "SynonymLexicon":
        entries = {}
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
            if not line.strip():
                continue
            if "\t" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'word<TAB>syn1,syn2,...'")
            word, syns = line.split("\t", 1)
            entries[word] = syns.split(",")
        return cls(entries)


def load_stopwords(path) -> frozenset[str]:
    return frozenset(w.strip().lower() for w in Path(path).read_text(encoding="utf-8").splitlines() if w.strip())


@lru_cache(maxsize=None)
def default_lexicon() -> SynonymLexicon:
    return SynonymLexicon.from_tsv(resources.files("calib_lab.resources") / "lexicon.tsv")


@lru_cache(maxsize=None)
def default_stopwords() -> frozenset[str]:
    return load_stopwords(resources.files("calib_lab.resources") / "stopwords.txt")


@dataclass(frozen=True)
class AugmentPolicy:
    kind: str = "none"
    change_fraction: float = 0.1
    mixup_alpha: float = 0.1
    aeda_mode: str = "third"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"augment kind must be one of {KINDS}, got {self.kind!r}")
        if not 0.0 <= self.change_fraction <= 1.0:
            raise ValueError("change_fraction must be in [0, 1]")
        if self.kind == "mixup" and self.mixup_alpha <= 0:
            raise ValueError("mixup_alpha must be > 0")
        if self.aeda_mode not in ("third", "fraction"):
            raise ValueError("aeda_mode must be 'third' or 'fraction'")


def n_changes(fraction: float, length: int) -> int:
    return max(1, int(np.floor(fraction * length + 0.5)))


def example_rng(seed: int, epoch: int, index: int) -> np.random.Generator:
    """Independent stream per (seed, epoch, example index)."""
    return np.random.default_rng([seed, _AUG_STREAM, epoch, index])


def synonym_replace(words: Sequence[str], fraction: float, lexicon: SynonymLexicon,
                    stopwords: frozenset[str], rng: np.random.Generator) -> list[str]:
    """Replace ``n`` random eligible positions with a random synonym each."""
    out = list(words)
    eligible = [i for i, w in enumerate(out) if w.lower() not in stopwords and w in lexicon]
    if not eligible:
        return out
    n = min(n_changes(fraction, len(out)), len(eligible))
    for i in sorted(rng.choice(eligible, size=n, replace=False).tolist()):
        syns = lexicon.synonyms(out[i])
        out[i] = syns[int(rng.integers(len(syns)))]
    return out


def random_insertion(words: Sequence[str], n: int, lexicon: SynonymLexicon,
                     stopwords: frozenset[str], rng: np.random.Generator) -> list[str]:
    """Insert a synonym of a random sentence word at a random position, ``n`` times."""
    out = list(words)
    candidates = [w for w in out if w.lower() not in stopwords and w in lexicon]
    if not candidates:
        return out
    for _ in range(n):
        syns = lexicon.synonyms(candidates[int(rng.integers(len(candidates)))])
        out.insert(int(rng.integers(len(out) + 1)), syns[int(rng.integers(len(syns)))])
    return out


def random_swap(words: Sequence[str], n: int, rng: np.random.Generator) -> list[str]:
    out = list(words)
    if len(out) < 2:
        return out
    for _ in range(n):
        i, j = rng.choice(len(out), size=2, replace=False)
        out[i], out[j] = out[j], out[i]
    return out


def random_deletion(words: Sequence[str], p: float, rng: np.random.Generator) -> list[str]:
    """Drop each word with probability ``p``; never returns an empty list."""
    out = list(words)
    if len(out) <= 1:
        return out
    keep = rng.random(len(out)) >= p
    if not keep.any():
        return [out[int(rng.integers(len(out)))]]
    return [w for w, k in zip(out, keep) if k]


def eda(words: Sequence[str], alpha: float, rng: np.random.Generator,
        lexicon: SynonymLexicon | None = None, stopwords: frozenset[str] | None = None,
        op: str | None = None) -> list[str]:
    """Apply one EDA operation (drawn uniformly unless ``op`` is given) at strength ``alpha``."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must be in [0, 1]")
    lexicon = lexicon if lexicon is not None else default_lexicon()
    stopwords = stopwords if stopwords is not None else default_stopwords()
    if op is None:
        op = EDA_OPS[int(rng.integers(len(EDA_OPS)))]
    if op not in EDA_OPS:
        raise ValueError(f"unknown EDA op {op!r}")
    if not words:
        return []
    n = n_changes(alpha, len(words))
    if op == "sr":
        return synonym_replace(words, alpha, lexicon, stopwords, rng)
    if op == "ri":
        return random_insertion(words, n, lexicon, stopwords, rng)
    if op == "rs":
        return random_swap(words, n, rng)
    return random_deletion(words, alpha, rng)


def aeda(words: Sequence[str], rng: np.random.Generator, fraction: float | None = None) -> list[str]:
    """Insert punctuation marks at distinct random gaps.

    The count is uniform on ``1..max(1, len // 3)``, or ``round(fraction * len)``
    (at least 1) when ``fraction`` is given.
    """
    words = list(words)
    if not words:
        return words
    if fraction is None:
        k = int(rng.integers(1, max(1, len(words) // 3) + 1))
    else:
        k = n_changes(fraction, len(words))
    gaps = set(rng.choice(len(words) + 1, size=min(k, len(words) + 1), replace=False).tolist())
    marks = iter(rng.choice(len(PUNCTUATION), size=len(gaps)).tolist())
    out = []
    for i in range(len(words) + 1):
        if i in gaps:
            out.append(PUNCTUATION[next(marks)])
        if i < len(words):
            out.append(words[i])
    return out


def augment_words(words: Sequence[str], policy: AugmentPolicy, rng: np.random.Generator,
                  lexicon: SynonymLexicon | None = None,
                  stopwords: frozenset[str] | None = None) -> list[str]:
    """Token-level augmentation for ``policy.kind``; identity for none/mixup."""
    if policy.kind in ("none", "mixup"):
        return list(words)
    lexicon = lexicon if lexicon is not None else default_lexicon()
    stopwords = stopwords if stopwords is not None else default_stopwords()
    if policy.kind == "sr":
        return synonym_replace(words, policy.change_fraction, lexicon, stopwords, rng)
    if policy.kind == "eda":
        return eda(words, policy.change_fraction, rng, lexicon, stopwords)
    fraction = policy.change_fraction if policy.aeda_mode == "fraction" else None
    return aeda(words, rng, fraction)


def sample_mixup_lambda(alpha: float, rng: np.random.Generator, size=None):
    """Draw the interpolation weight from Beta(alpha, alpha)."""
    if alpha <= 0:
        raise ValueError("mixup alpha must be > 0")
    return rng.beta(alpha, alpha, size=size)


def mixup_pair(z_i, z_j, target_i, target_j, lam: float):
    """``lam * z_i + (1 - lam) * z_j`` with loss weights on the two targets.

    Works on arrays or on :class:`~calib_lab.autodiff.Tensor` (differentiably).
    Returns ``(mixed, ((target_i, lam), (target_j, 1 - lam)))``.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lam must be in [0, 1]")
    if np.shape(getattr(z_i, "data", z_i)) != np.shape(getattr(z_j, "data", z_j)):
        raise ValueError("mixup embeddings must have the same shape")
    if isinstance(z_i, ad.Tensor) or isinstance(z_j, ad.Tensor):
        if lam == 1.0:
            mixed = ad.as_tensor(z_i)
        elif lam == 0.0:
            mixed = ad.as_tensor(z_j)
        else:
            mixed = ad.scale(z_i, lam) + ad.scale(z_j, 1.0 - lam)
    else:
        mixed = lam * np.asarray(z_i, dtype=float) + (1.0 - lam) * np.asarray(z_j, dtype=float)
    return mixed, ((target_i, lam), (target_j, 1.0 - lam))
