"""Retrieval-augmented sequence labeling.

A recurrent tagger whose token distributions are refined either by mixing in a
k-nearest-neighbor vote over a datastore of training tokens, or by attention
over a typed graph linking input tokens, retrieved tokens and their labels.
"""

from .corpus import Dataset, LabelSet, Scheme, TokenSequence, Vocab, generate_synthetic, read_conll, write_conll
from .datastore import Datastore, build as build_datastore, knn_query
from .encoder import Encoder, EncoderConfig, train_vanilla, vanilla_predict
from .evaluation import EvalReport, evaluate
from .gnn import GnnConfig, GnnParameters, gnn_predict, predict_sentences, train_gnn
from .graph import TagGraph, WindowConfig, construct
from .harness import ExperimentPlan, run_cells, run_plan
from .kernels import backend as kernel_backend
from .knnsl import InterpConfig, interpolate, knn_distribution, tag_knn

__version__ = "0.1.0"

__all__ = [
    "Dataset", "Datastore", "Encoder", "EncoderConfig", "EvalReport", "ExperimentPlan", "GnnConfig",
    "GnnParameters", "InterpConfig", "LabelSet", "Scheme", "TagGraph", "TokenSequence", "Vocab",
    "WindowConfig", "build_datastore", "construct", "evaluate", "generate_synthetic", "gnn_predict",
    "interpolate", "kernel_backend", "knn_distribution", "knn_query", "predict_sentences", "read_conll",
    "run_cells", "run_plan", "tag_knn", "train_gnn", "train_vanilla", "vanilla_predict", "write_conll",
]
