"""Popularity-aware alignment and contrast for LightGCN recommenders."""

from paac.dataset import (InteractionDataset, MiniBatch, PopularityIndex, RawInteraction,
                          build_popularity_index, build_unbiased_split, k_core_filter,
                          load_interactions)
from paac.encoder import EmbeddingState, build_adjacency, init_embeddings, propagate
from paac.errors import (EmptyResult, FormatError, InfeasibleSplit, NegativeSamplingStall,
                         NonFiniteLoss, PAACError, ParseError)
from paac.evaluation import MetricsReport, evaluate, separation_report
from paac.losses import Hyperparams, total_loss
from paac.trainer import TrainConfig, TrainReport, fit

__version__ = "0.1.0"

__all__ = [
    "EmbeddingState", "EmptyResult", "FormatError", "Hyperparams", "InfeasibleSplit",
    "InteractionDataset", "MetricsReport", "MiniBatch", "NegativeSamplingStall", "NonFiniteLoss",
    "PAACError", "ParseError", "PopularityIndex", "RawInteraction", "TrainConfig", "TrainReport",
    "build_adjacency", "build_popularity_index", "build_unbiased_split", "evaluate", "fit",
    "init_embeddings", "k_core_filter", "load_interactions", "propagate", "separation_report",
    "total_loss",
]
