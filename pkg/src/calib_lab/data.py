"""Dataset files, vocabulary, tokenization, subsampling and synthetic corpora.

A dataset lives in a directory holding ``train``, ``test`` and optionally
``dev`` files, either TSV (``label<TAB>text``) or JSONL
(``{"text": ..., "label": ...}``).  Labels are mapped to contiguous 0-based ids
in order of first appearance in the training file.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .model import CLS_ID, PAD_ID, UNK_ID

log = logging.getLogger(__name__)

SPLITS = ("train", "dev", "test")
FORMATS = {"tsv": ".tsv", "jsonl": ".jsonl"}
RESERVED = ("<pad>", "<unk>", "<cls>")
_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


class DataFormatError(ValueError):
    pass


def split_words(text: str) -> list[str]:
    """Lowercase; split on whitespace and at punctuation boundaries."""
    return _TOKEN_RE.findall(text.lower())


@dataclass
class Example:
    text: str
    label: int
    words: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.words:
            self.words = split_words(self.text)


@dataclass
class DatasetSplits:
    train: list[Example]
    dev: list[Example]
    test: list[Example]
    label_names: list[str]

    @property
    def num_classes(self) -> int:
        return len(self.label_names)

    def split(self, name: str) -> list[Example]:
        return getattr(self, name)


class Vocabulary:
    """Token <-> id map with pad=0, unk=1, cls=2."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: list[str] = list(RESERVED)
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(self.itos)}
        for t in tokens:
            self.add(t)

    def add(self, token: str) -> int:
        if token not in self.stoi:
            self.stoi[token] = len(self.itos)
            self.itos.append(token)
        return self.stoi[token]

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def lookup(self, words: Sequence[str]) -> list[int]:
        return [self.stoi.get(w, UNK_ID) for w in words]

    @classmethod
    def build(cls, examples: Iterable[Example]) -> "Vocabulary":
        vocab = cls()
        for ex in examples:
            for w in ex.words:
                vocab.add(w)
        return vocab

    def to_list(self) -> list[str]:
        return list(self.itos)

    @classmethod
    def from_list(cls, itos: Sequence[str]) -> "Vocabulary":
        if tuple(itos[: len(RESERVED)]) != RESERVED:
            raise ValueError("vocabulary does not start with the reserved tokens")
        return cls(itos[len(RESERVED):])


def tokenize(text_or_words, vocab: Vocabulary, max_len: int = 64) -> list[int]:
    """``[cls] + ids`` truncated to ``max_len``; unknown words map to unk."""
    words = split_words(text_or_words) if isinstance(text_or_words, str) else list(text_or_words)
    return ([CLS_ID] + vocab.lookup(words))[:max_len]


def pad_batch(sequences: Sequence[Sequence[int]], length: int | None = None) -> np.ndarray:
    length = length or max(len(s) for s in sequences)
    out = np.full((len(sequences), length), PAD_ID, dtype=np.int64)
    for i, s in enumerate(sequences):
        out[i, : len(s)] = s
    return out


# ---------------------------------------------------------------------------
# file I/O
# ---------------------------------------------------------------------------


def _read_records(path: Path, fmt: str) -> list[tuple[str, str]]:
    records = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            if fmt == "tsv":
                if "\t" not in line:
                    raise DataFormatError(f"{path}:{lineno}: expected 'label<TAB>text'")
                label, text = line.split("\t", 1)
            else:
                try:
                    obj = json.loads(line)
                    label, text = obj["label"], obj["text"]
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise DataFormatError(f"{path}:{lineno}: malformed JSONL record ({exc})") from None
            records.append((str(label), text))
    return records


def _detect(path: Path, fmt: str | None) -> tuple[dict[str, Path], str]:
    if fmt is not None and fmt not in FORMATS:
        raise ValueError(f"format must be one of {sorted(FORMATS)}")
    formats = [fmt] if fmt else list(FORMATS)
    for f in formats:
        files = {s: path / f"{s}{FORMATS[f]}" for s in SPLITS}
        if files["train"].exists():
            return {s: p for s, p in files.items() if p.exists()}, f
    raise FileNotFoundError(f"no train file found in {path}")


def load_dataset(path, fmt: str | None = None) -> DatasetSplits:
    """Load ``train``/``dev``/``test`` files from a directory.

    A missing dev split becomes empty; a missing test split is an error.
    """
    path = Path(path)
    files, fmt = _detect(path, fmt)
    if "test" not in files:
        raise FileNotFoundError(f"no test file in {path}")
    raw = {s: _read_records(p, fmt) for s, p in files.items()}
    names: list[str] = []
    for label, _ in raw["train"]:
        if label not in names:
            names.append(label)
    index = {n: i for i, n in enumerate(names)}
    splits = {}
    for s in SPLITS:
        rows = []
        for label, text in raw.get(s, []):
            if label not in index:
                raise DataFormatError(f"label {label!r} in {s} split does not occur in train")
            rows.append(Example(text, index[label]))
        splits[s] = rows
    return DatasetSplits(splits["train"], splits["dev"], splits["test"], names)


def write_dataset(splits: DatasetSplits, path, fmt: str = "tsv") -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for s in SPLITS:
        rows = splits.split(s)
        if s == "dev" and not rows:
            continue
        with (path / f"{s}{FORMATS[fmt]}").open("w", encoding="utf-8") as fh:
            for ex in rows:
                label = splits.label_names[ex.label]
                if fmt == "tsv":
                    fh.write(f"{label}\t{ex.text}\n")
                else:
                    fh.write(json.dumps({"text": ex.text, "label": label}) + "\n")
    return path


def check_lengths(examples: Sequence[Example], max_len: int) -> int:
    """Count examples that will be truncated; warns when any are."""
    n = sum(len(ex.words) + 1 > max_len for ex in examples)
    if n:
        log.warning("%d of %d examples exceed max_len=%d and will be truncated", n, len(examples), max_len)
    return n


# ---------------------------------------------------------------------------
# subsampling
# ---------------------------------------------------------------------------


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def subsample(examples: Sequence[Example], fraction: float, seed: int) -> list[Example]:
    """Stratified sample keeping ``round(fraction * n_c)`` (>= 1) per class.

    Selected examples keep their original relative order.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must be in (0, 1]")
    rng = np.random.default_rng(seed)
    labels = np.array([ex.label for ex in examples])
    keep: list[int] = []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        n = max(1, _round_half_up(fraction * idx.size))
        keep.extend(rng.permutation(idx)[:n].tolist())
    return [examples[i] for i in sorted(keep)]


# ---------------------------------------------------------------------------
# synthetic corpora
# ---------------------------------------------------------------------------

_FILLER_STOPWORDS = ("the", "a", "of", "is", "what", "which", "in", "to", "for", "how", "was", "and")
# TREC coarse label distribution of the 5,452-question training set
TREC_COARSE_PRIORS = {"ABBR": 86, "DESC": 1162, "ENTY": 1250, "HUM": 1223, "LOC": 835, "NUM": 896}


@dataclass
class ToyCorpus:
    splits: DatasetSplits
    lexicon: dict[str, list[str]]


def generate_toy_corpus(
    num_classes: int = 6,
    size: int = 1200,
    dev_size: int = 200,
    test_size: int = 500,
    vocab_size: int = 300,
    keywords_per_class: int = 12,
    signal: float = 0.3,
    confusion: float = 0.1,
    noise: float = 0.1,
    mean_length: int = 10,
    class_priors: Sequence[float] | None = None,
    label_names: Sequence[str] | None = None,
    seed: int = 0,
) -> ToyCorpus:
    """Keyword-signal text classification corpus plus a matching lexicon.

    Each token is drawn as a keyword of the true class with probability
    ``signal``, a keyword of a random other class with probability
    ``confusion``, and otherwise a shared filler word or stopword.  Each
    example's label is then replaced by a uniformly random other class with
    probability ``noise``.  Keywords come in synonym triples (recorded in the
    returned lexicon), so synonym replacement stays label-preserving.
    """
    if num_classes < 2:
        raise ValueError("num_classes must be >= 2")
    if not 0.0 <= signal + confusion <= 1.0 or not 0.0 <= noise < 1.0:
        raise ValueError("signal + confusion must lie in [0, 1] and noise in [0, 1)")
    rng = np.random.default_rng(seed)
    names = list(label_names) if label_names else [f"class{c}" for c in range(num_classes)]
    if len(names) != num_classes:
        raise ValueError("label_names must have num_classes entries")
    priors = np.ones(num_classes) if class_priors is None else np.asarray(class_priors, dtype=float)
    priors = priors / priors.sum()

    keywords = [[f"k{c}x{j}" for j in range(keywords_per_class)] for c in range(num_classes)]
    n_filler = max(1, vocab_size - num_classes * keywords_per_class - len(_FILLER_STOPWORDS))
    fillers = [f"w{j}" for j in range(n_filler)]
    lexicon: dict[str, list[str]] = {}
    for group_source in keywords + [fillers]:
        for start in range(0, len(group_source) - 2, 3):
            group = group_source[start:start + 3]
            for w in group:
                lexicon[w] = [o for o in group if o != w]
    background = fillers + list(_FILLER_STOPWORDS)

    def sentence(c: int) -> str:
        length = max(2, int(rng.poisson(mean_length)))
        words = []
        for _ in range(length):
            u = rng.random()
            if u < signal:
                words.append(keywords[c][rng.integers(keywords_per_class)])
            elif u < signal + confusion:
                other = (c + 1 + rng.integers(num_classes - 1)) % num_classes
                words.append(keywords[other][rng.integers(keywords_per_class)])
            else:
                words.append(background[rng.integers(len(background))])
        return " ".join(words)

    def make(n: int, ensure_all: bool) -> list[Example]:
        classes = rng.choice(num_classes, size=n, p=priors)
        if ensure_all and n >= num_classes:
            classes[:num_classes] = np.arange(num_classes)
            classes = rng.permutation(classes)
        rows = []
        for c in classes:
            label = int(c)
            if rng.random() < noise:
                label = int((c + 1 + rng.integers(num_classes - 1)) % num_classes)
            rows.append(Example(sentence(int(c)), label))
        return rows

    train = make(size, ensure_all=True)
    dev = make(dev_size, ensure_all=False)
    test = make(test_size, ensure_all=False)
    # guarantee first-appearance order in train matches label ids
    seen: list[int] = []
    for ex in train:
        if ex.label not in seen:
            seen.append(ex.label)
    remap = {old: new for new, old in enumerate(seen)}
    names = [names[old] for old in seen]
    for ex in train + dev + test:
        ex.label = remap[ex.label]
    return ToyCorpus(DatasetSplits(train, dev, test, names), lexicon)


def trec_like_corpus(seed: int = 0, noise: float = 0.1, signal: float = 0.3,
                     confusion: float = 0.1) -> ToyCorpus:
    """Six-class stand-in with TREC-coarse split sizes, priors and mean length."""
    return generate_toy_corpus(
        num_classes=6,
        size=4900,
        dev_size=500,
        test_size=500,
        vocab_size=600,
        signal=signal,
        confusion=confusion,
        noise=noise,
        mean_length=10,
        class_priors=list(TREC_COARSE_PRIORS.values()),
        label_names=list(TREC_COARSE_PRIORS),
        seed=seed,
    )


def write_lexicon(lexicon: dict[str, list[str]], path) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for word, syns in lexicon.items():
            fh.write(f"{word}\t{','.join(syns)}\n")
    return path
