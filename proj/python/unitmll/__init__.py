"""Unit-sequence language-model scoring: quantisation, prompting, MLL and analysis."""

from ._core import (
    NgramModel,
    UnitmllError,
    assign,
    compute_eer,
    corpus_mll,
    dedup,
    kmeans,
    pca_fit,
    pearson,
    rank_models,
    render_prompt,
    render_tokens,
    run_cli,
)

__all__ = [
    "NgramModel",
    "UnitmllError",
    "assign",
    "compute_eer",
    "corpus_mll",
    "dedup",
    "kmeans",
    "pca_fit",
    "pearson",
    "rank_models",
    "render_prompt",
    "render_tokens",
    "run_cli",
]
