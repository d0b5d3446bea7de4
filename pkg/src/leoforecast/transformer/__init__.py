"""Sparse-attention encoder-decoder forecaster on a small numpy autodiff engine."""

from .attention import full_attention, num_active_queries, prob_sparse_attention, sparsity_score
from .model import SparseTransformer, TransformerConfig
from .timefeatures import time_embed
from .training import TrainedModel, load_model, predict, save_model, train

__all__ = [
    "full_attention",
    "num_active_queries",
    "prob_sparse_attention",
    "sparsity_score",
    "SparseTransformer",
    "TransformerConfig",
    "time_embed",
    "TrainedModel",
    "load_model",
    "predict",
    "save_model",
    "train",
]
