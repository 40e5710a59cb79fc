"""Hate context detection and hate intensity reduction for short social-media text.

A transformer detector classifies comments, Integrated Gradients ranks the words
behind a hate prediction, and a masked language model rewrites the strongest of
them, keeping the candidate closest to the source by BERTScore.
"""

from .attribution import HateWord, IGConfig, explain, integrated_gradients
from .corpus import Corpus, LabeledComment, class_distribution, load_corpus, make_folds, preprocess
from .detector import TrainedDetector, TrainingConfig, cross_validate, train
from .encoder import BuiltinEncoder, build_encoder, load_encoder, pretrain_mlm, save_encoder
from .evaluation import MetricsReport, aggregate_folds, classification_metrics, jaccard, pearson
from .reducer import ReducerConfig, bertscore, reduce_text

__version__ = "0.1.0"

__all__ = [
    "BuiltinEncoder", "Corpus", "HateWord", "IGConfig", "LabeledComment", "MetricsReport",
    "ReducerConfig", "TrainedDetector", "TrainingConfig", "aggregate_folds", "bertscore",
    "build_encoder", "class_distribution", "classification_metrics", "cross_validate", "explain",
    "integrated_gradients", "jaccard", "load_corpus", "load_encoder", "make_folds", "pearson",
    "preprocess", "pretrain_mlm", "reduce_text", "save_encoder", "train",
]
