"""Calibration lab: a numpy transformer classifier with calibration-oriented
losses, augmentations, ensembles and metrics."""

from .augment import AugmentPolicy, aeda, eda, mixup_pair, synonym_replace
from .data import DatasetSplits, Example, Vocabulary, generate_toy_corpus, load_dataset, subsample, trec_like_corpus
from .ensembles import EnsembleConfig, EnsemblePrediction, mc_dropout_predict, mimo_predict, predict_average
from .harness import ExperimentConfig, RunRecord, export_report, load_report, recipe, train
from .losses import LossSpec, composite_loss
from .metrics import EvalReport, ReliabilityBins, disagreement, ece, evaluate, hausdorff_euclidean, nll
from .model import EncoderConfig, MimoClassifier, TransformerClassifier, mimo_forward

__version__ = "0.1.0"

__all__ = [
    "AugmentPolicy", "DatasetSplits", "EncoderConfig", "EnsembleConfig", "EnsemblePrediction", "EvalReport",
    "Example", "ExperimentConfig", "LossSpec", "MimoClassifier", "ReliabilityBins", "RunRecord",
    "TransformerClassifier", "Vocabulary", "aeda", "composite_loss", "disagreement", "ece", "eda", "evaluate",
    "export_report", "generate_toy_corpus", "hausdorff_euclidean", "load_dataset", "load_report",
    "mc_dropout_predict", "mimo_forward", "mimo_predict", "mixup_pair", "nll", "predict_average", "recipe",
    "subsample", "synonym_replace", "train", "trec_like_corpus",
]
