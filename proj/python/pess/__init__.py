"""Persona extraction through semantic similarity: python surface.

Thin wrapper over the compiled ``_pess`` module, which exposes the core
operations: text normalization, hashed n-gram sentence embeddings, the
similarity-matrix matcher, text metrics and the toy-corpus generator.
"""

from ._pess import (  # noqa: F401
    ArgumentError,
    __version__,
    bleu_n,
    cosine,
    default_tau,
    distinct_n,
    embed,
    embed_score,
    make_toy_corpus,
    match_personas,
    match_scores,
    normalize_text,
    rouge_l,
    rouge_n,
    similarity_matrix,
    toy_trait_inventory_size,
)

__all__ = [
    "ArgumentError",
    "bleu_n",
    "cosine",
    "default_tau",
    "distinct_n",
    "embed",
    "embed_score",
    "make_toy_corpus",
    "match_personas",
    "match_scores",
    "normalize_text",
    "rouge_l",
    "rouge_n",
    "similarity_matrix",
    "toy_trait_inventory_size",
]
