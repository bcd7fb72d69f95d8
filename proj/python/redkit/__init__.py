"""Relation dataset and modelling toolkit."""

from ._redkit import (
    RedkitError,
    build_graph,
    confusion_matrix,
    cosine_embedding_loss,
    f1_score,
    fleiss_kappa,
    random_baseline,
    run_holdout,
    sample_sentences,
    synthetic_instances,
)

__all__ = [
    "RedkitError",
    "build_graph",
    "confusion_matrix",
    "cosine_embedding_loss",
    "f1_score",
    "fleiss_kappa",
    "random_baseline",
    "run_holdout",
    "sample_sentences",
    "synthetic_instances",
]
