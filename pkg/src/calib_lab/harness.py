"""Experiment configuration, recipes, multi-seed runs and reports."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import augment as aug
from .augment import AugmentPolicy, SynonymLexicon
from .data import DatasetSplits, Example, Vocabulary, check_lengths, generate_toy_corpus, load_dataset, \
    subsample, tokenize, trec_like_corpus
from .ensembles import (
    EnsembleConfig, fit_mimo, mc_dropout_predict, mc_evaluator, mimo_predict, predict_average,
    train_deep_ensemble,
)
from .losses import LossSpec
from .metrics import DEFAULT_BINS, EvalReport, disagreement, evaluate, hausdorff_euclidean, reliability_bins
from .model import EncoderConfig, TransformerClassifier, load_checkpoint, save_checkpoint
from .training import (
    INIT, MC, MIXUP, EvalData, OptimConfig, TrainingSet, classifier_step, fit, predict_probs,
    single_evaluator, stream,
)

log = logging.getLogger(__name__)

WORKERS_ENV = "CALIB_LAB_WORKERS"
BUILTIN_PREFIX = "builtin:"
_DERIVED_ENCODER_FIELDS = ("vocab_size", "num_classes")


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    loss: LossSpec = field(default_factory=LossSpec)
    augment: AugmentPolicy = field(default_factory=AugmentPolicy)
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    data_path: str = "builtin:toy"
    data_format: str | None = None
    fraction: float = 1.0
    subsample_seed: int = 0
    seeds: list[int] = field(default_factory=lambda: [0])
    out_dir: str | None = None
    lexicon_path: str | None = None
    stopwords_path: str | None = None
    n_bins: int = DEFAULT_BINS
    save_checkpoints: bool = True

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("seeds must be non-empty")
        if not 0.0 < self.fraction <= 1.0:
            raise ValueError("fraction must be in (0, 1]")

    def validate(self) -> None:
        """Check that every referenced file exists."""
        if not self.data_path.startswith(BUILTIN_PREFIX) and not Path(self.data_path).exists():
            raise FileNotFoundError(f"data_path {self.data_path} does not exist")
        for p in (self.lexicon_path, self.stopwords_path):
            if p is not None and not Path(p).exists():
                raise FileNotFoundError(f"{p} does not exist")

    def to_flat(self) -> dict:
        return to_flat(self)

    def with_recipe(self, name: str, low_resource: bool | None = None) -> "ExperimentConfig":
        low = self.fraction < 1.0 if low_resource is None else low_resource
        flat = {**self.to_flat(), **recipe(name, low_resource=low)}
        if flat["name"] == ExperimentConfig.name:
            flat["name"] = name
        return from_flat(flat)

    def hash(self) -> str:
        return config_hash(self)


# (section attribute, dataclass, {field: flat key}) -- unlisted fields keep their name
_SECTIONS = (
    ("encoder", EncoderConfig, {}),
    ("loss", LossSpec, {"base": "loss"}),
    ("augment", AugmentPolicy, {"kind": "augment"}),
    ("ensemble", EnsembleConfig, {"kind": "ensemble"}),
    ("optim", OptimConfig, {}),
)
_TOP_LEVEL = tuple(f.name for f in dataclasses.fields(ExperimentConfig) if f.name not in {s[0] for s in _SECTIONS})
_NOT_HASHED = ("out_dir", "save_checkpoints")


def _section_keys(section: str, cls, renames: dict) -> dict[str, str]:
    skip = _DERIVED_ENCODER_FIELDS if section == "encoder" else ()
    return {f.name: renames.get(f.name, f.name) for f in dataclasses.fields(cls) if f.name not in skip}


def flat_keys() -> list[str]:
    keys = list(_TOP_LEVEL)
    for section, cls, renames in _SECTIONS:
        keys.extend(_section_keys(section, cls, renames).values())
    return keys


def to_flat(cfg: ExperimentConfig) -> dict:
    flat = {k: getattr(cfg, k) for k in _TOP_LEVEL}
    flat["seeds"] = list(cfg.seeds)
    for section, cls, renames in _SECTIONS:
        obj = getattr(cfg, section)
        for fname, key in _section_keys(section, cls, renames).items():
            value = getattr(obj, fname)
            flat[key] = list(value) if isinstance(value, (list, tuple)) else value
    return flat


def from_flat(flat: dict) -> ExperimentConfig:
    """Build a config from flat keys; unknown keys are errors."""
    unknown = set(flat) - set(flat_keys())
    if unknown:
        raise KeyError(f"unknown config keys: {sorted(unknown)}")
    kwargs = {k: flat[k] for k in _TOP_LEVEL if k in flat}
    for section, cls, renames in _SECTIONS:
        sub = {fname: flat[key] for fname, key in _section_keys(section, cls, renames).items() if key in flat}
        if section == "encoder":
            # placeholders; the real values come from the data
            sub.setdefault("vocab_size", 1000)
            sub.setdefault("num_classes", 2)
        kwargs[section] = cls(**sub)
    return ExperimentConfig(**kwargs)


def load_config(path) -> ExperimentConfig:
    return from_flat(json.loads(Path(path).read_text()))


def save_config(cfg: ExperimentConfig, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(cfg.to_flat(), indent=2, sort_keys=True))
    return path


def config_hash(cfg: ExperimentConfig) -> str:
    flat = {k: v for k, v in cfg.to_flat().items() if k not in _NOT_HASHED}
    return hashlib.sha256(json.dumps(flat, sort_keys=True).encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# recipes
# ---------------------------------------------------------------------------

ERL_BETA = 0.001
LS_EPSILON = 0.01
MIXUP_ALPHA = 0.1
MIMO_P = 0.2
MC_MEMBERS = 5

RECIPES = ("baseline", "ce+erl", "ce+ls", "bl", "bl+erl", "bl+ls", "sr", "eda", "aeda", "mixup",
           "mcdrop", "mimo", "de", "call-de", "call-mimo")


def recipe(name: str, low_resource: bool = False) -> dict:
    """Flat loss/augment/ensemble settings for a named method.

    ``low_resource`` selects the data-scarce defaults (5% word changes for
    SR/EDA/AEDA and three deep-ensemble members instead of two).
    """
    name = name.lower()
    if name not in RECIPES:
        raise KeyError(f"unknown recipe {name!r}; choose from {RECIPES}")
    frac = 0.05 if low_resource else 0.1
    r = {"loss": "ce", "erl_beta": 0.0, "ls_epsilon": 0.0,
         "augment": "none", "change_fraction": frac, "mixup_alpha": MIXUP_ALPHA, "aeda_mode": "third",
         "ensemble": "single", "members": 1, "mc_dropout_rate": None, "mimo_repetition_p": MIMO_P,
         "member_seeds": None, "de_init": "independent", "share_heads": False}
    parts = {"call-de": ["bl", "erl", "mixup", "de"], "call-mimo": ["bl", "erl", "mixup", "mimo"]}.get(
        name, name.split("+"))
    for part in parts:
        if part == "baseline":
            pass
        elif part == "bl":
            r["loss"] = "brier"
        elif part == "ce":
            r["loss"] = "ce"
        elif part == "erl":
            r["erl_beta"] = ERL_BETA
        elif part == "ls":
            r["ls_epsilon"] = LS_EPSILON
        elif part in ("sr", "eda", "aeda", "mixup"):
            r["augment"] = part
        elif part == "mcdrop":
            r.update(ensemble="mc-dropout", members=MC_MEMBERS)
        elif part == "mimo":
            r.update(ensemble="mimo", members=2)
        elif part == "de":
            r.update(ensemble="deep-ensemble", members=3 if low_resource else 2)
    return r


# ---------------------------------------------------------------------------
# data preparation
# ---------------------------------------------------------------------------


@dataclass
class Prepared:
    splits: DatasetSplits
    vocab: Vocabulary
    encoder: EncoderConfig
    lexicon: SynonymLexicon
    stopwords: frozenset[str]
    evals: EvalData


def load_data(cfg: ExperimentConfig) -> tuple[DatasetSplits, SynonymLexicon | None]:
    if cfg.data_path.startswith(BUILTIN_PREFIX):
        which = cfg.data_path[len(BUILTIN_PREFIX):]
        if which == "toy":
            corpus = generate_toy_corpus(seed=0)
        elif which == "trec-like":
            corpus = trec_like_corpus(seed=0)
        else:
            raise ValueError(f"unknown builtin dataset {which!r}")
        return corpus.splits, SynonymLexicon(corpus.lexicon)
    path = Path(cfg.data_path)
    lexicon = SynonymLexicon.from_tsv(path / "lexicon.tsv") if (path / "lexicon.tsv").exists() else None
    return load_dataset(path, cfg.data_format), lexicon


def prepare(cfg: ExperimentConfig, data: DatasetSplits | None = None,
            lexicon: SynonymLexicon | None = None) -> Prepared:
    if data is None:
        cfg.validate()
        data, found = load_data(cfg)
        lexicon = lexicon or found
    if cfg.lexicon_path:
        lexicon = SynonymLexicon.from_tsv(cfg.lexicon_path)
    lexicon = lexicon or aug.default_lexicon()
    stopwords = aug.load_stopwords(cfg.stopwords_path) if cfg.stopwords_path else aug.default_stopwords()
    train = data.train if cfg.fraction >= 1.0 else subsample(data.train, cfg.fraction, cfg.subsample_seed)
    splits = DatasetSplits(train, data.dev, data.test, data.label_names)
    vocab = Vocabulary.build(train)
    max_len = cfg.encoder.max_seq_len
    check_lengths(train, max_len)
    encoder = dataclasses.replace(cfg.encoder, vocab_size=len(vocab), num_classes=data.num_classes)

    def toks(rows: Sequence[Example]):
        return [tokenize(ex.words, vocab, max_len) for ex in rows], np.array([ex.label for ex in rows], dtype=np.int64)

    evals = EvalData(*toks(train), *toks(data.dev), *toks(data.test))
    return Prepared(splits, vocab, encoder, lexicon, stopwords, evals)


# ---------------------------------------------------------------------------
# run records
# ---------------------------------------------------------------------------


@dataclass
class SeedResult:
    seed: int
    member_seeds: list[int]
    history: list[dict]
    test: dict
    test_best_dev: dict
    best_dev_epoch: list[int]
    member_test: list[dict]
    final_disagreement: float | None
    bins: list[list[float]]
    duration_s: float = 0.0

    def to_dict(self, timing: bool = False) -> dict:
        d = dataclasses.asdict(self)
        if not timing:
            d.pop("duration_s")
        return d


SUMMARY_METRICS = ("accuracy", "ece", "nll", "brier")


@dataclass
class RunRecord:
    name: str
    config: dict
    config_hash: str
    seeds: list[SeedResult]
    summary: dict
    notes: list[str] = field(default_factory=list)
    duration_s: float = 0.0

    def mean(self, metric: str) -> float:
        return self.summary[metric]["mean"]

    def to_dict(self, timing: bool = False) -> dict:
        d = {
            "name": self.name,
            "config": self.config,
            "config_hash": self.config_hash,
            "seeds": [s.to_dict(timing) for s in self.seeds],
            "summary": self.summary,
            "notes": self.notes,
        }
        if timing:
            d["duration_s"] = self.duration_s
        return d

    def timing(self) -> dict:
        return {"duration_s": self.duration_s, "seeds": {str(s.seed): s.duration_s for s in self.seeds}}

    @classmethod
    def from_dict(cls, d: dict, timing: dict | None = None) -> "RunRecord":
        timing = timing or {}
        seed_times = timing.get("seeds", {})
        seeds = [SeedResult(**{**s, "duration_s": seed_times.get(str(s["seed"]), s.get("duration_s", 0.0))})
                 for s in d["seeds"]]
        return cls(d["name"], d["config"], d["config_hash"], seeds, d["summary"], d.get("notes", []),
                   timing.get("duration_s", d.get("duration_s", 0.0)))


def summarize(seeds: Sequence[SeedResult]) -> dict:
    metrics = list(SUMMARY_METRICS)
    if all(s.final_disagreement is not None for s in seeds):
        metrics.append("disagreement")
    out = {}
    for m in metrics:
        vals = np.array([s.final_disagreement if m == "disagreement" else s.test[m] for s in seeds])
        out[m] = {"mean": float(np.mean(vals)), "std": float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0}
    return out


# ---------------------------------------------------------------------------
# training orchestration
# ---------------------------------------------------------------------------


def _report(probs: np.ndarray, labels: np.ndarray, n_bins: int) -> dict:
    return evaluate(probs, labels, n_bins).to_dict()


def _checkpoint_extra(prep: Prepared) -> dict:
    return {"vocab": prep.vocab.to_list(), "label_names": prep.splits.label_names,
            "max_len": prep.encoder.max_seq_len}


def _combine_member_histories(fits, test_labels, n_bins) -> list[dict]:
    history = []
    for e in range(len(fits[0].history)):
        member = np.concatenate([f.epoch_test_probs[e] for f in fits])
        avg = member.mean(axis=0)
        rep = evaluate(avg, test_labels, n_bins)
        rec = {"epoch": e + 1, "test_nll": rep.nll, "test_accuracy": rep.accuracy, "test_ece": rep.ece}
        if len(fits) > 1:
            rec["disagreement"] = disagreement(list(member))
        for key in ("train_loss", "train_nll", "dev_nll", "dev_accuracy", "weight_norm"):
            if key in fits[0].history[e]:
                rec[key] = float(np.mean([f.history[e][key] for f in fits]))
        digests = [f.history[e].get("augment_digest") for f in fits]
        if digests[0] is not None:
            rec["augment_digest"] = hashlib.sha256("".join(digests).encode()).hexdigest()
        history.append(rec)
    return history


def run_seed(cfg: ExperimentConfig, prep: Prepared, seed: int) -> SeedResult:
    """Train and evaluate one seed under the configured ensemble protocol."""
    ens, policy, enc = cfg.ensemble, cfg.augment, prep.encoder
    evals = prep.evals
    labels = evals.test_labels
    mixup_alpha = policy.mixup_alpha if policy.kind == "mixup" else None

    def make_data(s: int) -> TrainingSet:
        return TrainingSet(prep.splits.train, prep.vocab, enc.max_seq_len, policy, s,
                           prep.lexicon, prep.stopwords)

    seed_dir = None
    if cfg.out_dir and cfg.save_checkpoints:
        seed_dir = Path(cfg.out_dir) / "checkpoints" / f"seed{seed}"
        seed_dir.mkdir(parents=True, exist_ok=True)
    manifest = {"kind": ens.kind, "members": [], "label_names": prep.splits.label_names}

    if ens.kind == "deep-ensemble":
        pairs = train_deep_ensemble(enc, ens, make_data, evals, cfg.optim, cfg.loss, seed, mixup_alpha)
        models = [m for m, _ in pairs]
        fits = [f for _, f in pairs]
        member_seeds = ens.seeds_for(seed)
        final = predict_average([predict_probs(m, evals.test) for m in models])
        best_probs = []
        for m, f in zip(models, fits):
            m.load_state_dict(f.best_state)
            best_probs.append(predict_probs(m, evals.test))
            m.load_state_dict(f.final_state)
        best = predict_average(best_probs).probs
        history = _combine_member_histories(fits, labels, cfg.n_bins)
        best_epochs = [f.best_epoch for f in fits]
        duration = sum(f.duration_s for f in fits)
        if seed_dir:
            for i, (m, f) in enumerate(zip(models, fits)):
                manifest["members"].append(_save_pair(m, f, seed_dir, f"member{i}", prep))
            manifest["member_seeds"] = member_seeds
    else:
        if ens.kind == "mimo":
            model, fr = fit_mimo(enc, ens, make_data(seed), evals, cfg.optim, cfg.loss, seed, mixup_alpha)

            def predict(m):
                return mimo_predict(m, evals.test)
        else:
            model = TransformerClassifier(enc, seed=stream(seed, INIT))
            data = make_data(seed)
            if ens.kind == "mc-dropout":
                evaluator = mc_evaluator(ens.members, ens.mc_dropout_rate, seed)
            else:
                evaluator = single_evaluator
            fr = fit(model, classifier_step(model, data, cfg.loss, seed, mixup_alpha), len(data),
                     evaluator, evals, cfg.optim, seed, data)

            def predict(m):
                if ens.kind == "mc-dropout":
                    return mc_dropout_predict(m, evals.test, ens.members, ens.mc_dropout_rate, stream(seed, MC))
                return predict_average([predict_probs(m, evals.test)])
        final = predict(model)
        model.load_state_dict(fr.best_state)
        best = predict(model).probs
        model.load_state_dict(fr.final_state)
        history = fr.history
        best_epochs = [fr.best_epoch]
        member_seeds = [seed]
        duration = fr.duration_s
        if seed_dir:
            manifest["members"].append(_save_pair(model, fr, seed_dir, "model", prep))
            manifest.update(mc_members=ens.members, mc_dropout_rate=ens.mc_dropout_rate)

    if seed_dir:
        (seed_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))
    multi = final.members > 1
    return SeedResult(
        seed=seed,
        member_seeds=member_seeds,
        history=history,
        test=_report(final.probs, labels, cfg.n_bins),
        test_best_dev=_report(best, labels, cfg.n_bins),
        best_dev_epoch=best_epochs,
        member_test=[_report(p, labels, cfg.n_bins) for p in final.member_probs] if multi else [],
        final_disagreement=disagreement(list(final.member_probs)) if multi else None,
        bins=[list(r) for r in reliability_bins(final.probs, labels, cfg.n_bins).rows()],
        duration_s=duration,
    )


def _save_pair(model, fr, seed_dir: Path, stem: str, prep: Prepared) -> dict:
    extra = _checkpoint_extra(prep)
    files = {}
    for tag, state in (("final", fr.final_state), ("best_dev", fr.best_state)):
        model.load_state_dict(state)
        path = seed_dir / f"{stem}_{tag}.json"
        save_checkpoint(model, path, **extra)
        files[tag] = path.name
    model.load_state_dict(fr.final_state)
    return files


def _run_job(args) -> SeedResult:
    cfg, prep, seed = args
    return run_seed(cfg, prep, seed)


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def _notes(cfg: ExperimentConfig) -> list[str]:
    notes = []
    if cfg.ensemble.kind == "deep-ensemble":
        if cfg.ensemble.de_init == "independent":
            notes.append("deep-ensemble members use fully independent random initialization "
                         "(no pre-trained body to share)")
        else:
            notes.append("deep-ensemble members share one body initialization; heads are re-drawn per member")
    if cfg.ensemble.kind == "mimo":
        notes.append("MIMO test inputs are repeated to every member")
    return notes


def train(cfg: ExperimentConfig, data: DatasetSplits | None = None,
          lexicon: SynonymLexicon | None = None, workers: int | None = None) -> RunRecord:
    """Run every seed of ``cfg`` and aggregate; exports a report when ``out_dir`` is set."""
    started = time.perf_counter()
    prep = prepare(cfg, data, lexicon)
    workers = worker_count() if workers is None else workers
    jobs = [(cfg, prep, s) for s in cfg.seeds]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            seeds = list(pool.map(_run_job, jobs))
    else:
        seeds = [run_seed(cfg, prep, s) for s in cfg.seeds]
    flat = {k: v for k, v in cfg.to_flat().items() if k not in _NOT_HASHED}
    record = RunRecord(cfg.name, flat, config_hash(cfg), seeds, summarize(seeds), _notes(cfg),
                       time.perf_counter() - started)
    if cfg.out_dir:
        export_report([record], cfg.out_dir)
    return record


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

SUMMARY_HEADER = ("name", "seed", "accuracy_pct", "ece_x100", "nll_x100", "brier", "n")


def summary_rows(records: Sequence[RunRecord]) -> list[list]:
    rows = []
    for r in records:
        for s in r.seeds:
            t = s.test
            rows.append([r.name, s.seed, 100.0 * t["accuracy"], 100.0 * t["ece"], 100.0 * t["nll"],
                         t["brier"], t["n"]])
        for stat in ("mean", "std"):
            sm = r.summary
            rows.append([r.name, stat, 100.0 * sm["accuracy"][stat], 100.0 * sm["ece"][stat],
                         100.0 * sm["nll"][stat], sm["brier"][stat], ""])
    return rows


def write_summary_csv(records: Sequence[RunRecord], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_HEADER)
        writer.writerows(summary_rows(records))
    return path


def _safe(name: str) -> str:
    return "".join(c if c.isalnum() or c in "+-_." else "_" for c in name)


def export_report(records: Sequence[RunRecord], path) -> dict[str, Path]:
    """Write report.json (raw values), timing.json, summary.csv (x100 ECE/NLL)
    and one reliability-bin CSV per run and seed under directory ``path``."""
    if not records:
        raise ValueError("no run records to export")
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    report = out / "report.json"
    report.write_text(json.dumps({"records": [r.to_dict() for r in records]}, indent=1, sort_keys=True))
    timing = out / "timing.json"
    timing.write_text(json.dumps({r.name: r.timing() for r in records}, indent=1, sort_keys=True))
    bins_dir = out / "reliability"
    bins_dir.mkdir(exist_ok=True)
    for r in records:
        for s in r.seeds:
            with (bins_dir / f"{_safe(r.name)}__seed{s.seed}.csv").open("w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(("bin_lo", "bin_hi", "count", "accuracy", "confidence"))
                writer.writerows(s.bins)
    return {"report": report, "timing": timing, "summary": write_summary_csv(records, out / "summary.csv"),
            "reliability": bins_dir}


def load_report(path) -> list[RunRecord]:
    path = Path(path)
    report = path / "report.json" if path.is_dir() else path
    timing_file = report.parent / "timing.json"
    timing = json.loads(timing_file.read_text()) if timing_file.exists() else {}
    return [RunRecord.from_dict(d, timing.get(d["name"])) for d in json.loads(report.read_text())["records"]]


def collect_reports(root) -> list[RunRecord]:
    records = []
    for report in sorted(Path(root).rglob("report.json")):
        records.extend(load_report(report))
    return records


# ---------------------------------------------------------------------------
# diagnostics and checkpoint evaluation
# ---------------------------------------------------------------------------


def pooled_embeddings(model: TransformerClassifier, seqs, batch_size: int = 256) -> np.ndarray:
    from .autodiff import no_grad
    from .data import pad_batch
    out = []
    with no_grad():
        for start in range(0, len(seqs), batch_size):
            out.append(model.encode(pad_batch(seqs[start:start + batch_size])).data)
    return np.concatenate(out)


def representation_distances(model: TransformerClassifier, train: Sequence[Example], test: Sequence[Example],
                             policy: AugmentPolicy, vocab: Vocabulary, seed: int = 0, copies: int = 1,
                             variant: str = "max", lexicon: SynonymLexicon | None = None,
                             stopwords: frozenset[str] | None = None) -> dict:
    """Hausdorff distances between pooled embeddings of original, augmented and test sentences.

    Returns ``orig_vs_aug`` (training sentences vs their augmented copies) and
    ``aug_vs_test`` (augmented training set vs the clean test set).  For
    MixUp the augmented set is the mixed pooled embeddings.
    """
    max_len = model.config.max_seq_len
    orig = pooled_embeddings(model, [tokenize(ex.words, vocab, max_len) for ex in train])
    tst = pooled_embeddings(model, [tokenize(ex.words, vocab, max_len) for ex in test])
    augmented = []
    for c in range(copies):
        if policy.kind == "mixup":
            rng = stream(seed + c, MIXUP)
            lam = aug.sample_mixup_lambda(policy.mixup_alpha, rng, size=(len(orig), 1))
            augmented.append(lam * orig + (1.0 - lam) * orig[rng.permutation(len(orig))])
        else:
            seqs = [tokenize(aug.augment_words(ex.words, policy, aug.example_rng(seed, c, i), lexicon, stopwords),
                             vocab, max_len) for i, ex in enumerate(train)]
            augmented.append(pooled_embeddings(model, seqs))
    augmented = np.concatenate(augmented)
    return {"orig_vs_aug": hausdorff_euclidean(orig, augmented, variant),
            "aug_vs_test": hausdorff_euclidean(augmented, tst, variant),
            "variant": variant, "copies": copies}


def evaluate_checkpoint(path, data_path, data_format: str | None = None, n_bins: int = DEFAULT_BINS,
                        seed: int = 0) -> EvalReport:
    """Evaluate a checkpoint file or a seed manifest on a dataset's test split."""
    path = Path(path)
    obj = json.loads(path.read_text())
    if "members" in obj and isinstance(obj["members"], list):
        models = [load_checkpoint(path.parent / m["final"]) for m in obj["members"]]
        kind = obj["kind"]
    else:
        models = [load_checkpoint(path)]
        kind = "mimo" if obj.get("kind") == "mimo" else "single"
    extra = models[0][1]
    vocab = Vocabulary.from_list(extra["vocab"])
    splits = load_dataset(Path(data_path), data_format)
    if "label_names" in extra and splits.label_names != extra["label_names"]:
        order = {n: i for i, n in enumerate(extra["label_names"])}
        remap = [order[n] for n in splits.label_names]
        labels = np.array([remap[ex.label] for ex in splits.test])
    else:
        labels = np.array([ex.label for ex in splits.test])
    seqs = [tokenize(ex.words, vocab, extra["max_len"]) for ex in splits.test]
    if kind == "mimo":
        probs = mimo_predict(models[0][0], seqs).probs
    elif kind == "mc-dropout":
        probs = mc_dropout_predict(models[0][0], seqs, obj.get("mc_members", 1), obj.get("mc_dropout_rate"),
                                   stream(seed, MC)).probs
    else:
        probs = predict_average([predict_probs(m, seqs) for m, _ in models]).probs
    return evaluate(probs, labels, n_bins)
