"""Embedding bank construction and top-K dot-product retrieval."""

from .bank import (
    EmbeddingBank,
    RetrievalResult,
    build_bank,
    embed_patches,
    export_embeddings,
    impute,
    impute_batch,
    load_bank,
    save_bank,
    topk,
)
from .topk import BACKEND, select_topk, select_topk_batch

__all__ = [
    "BACKEND",
    "EmbeddingBank",
    "RetrievalResult",
    "build_bank",
    "embed_patches",
    "export_embeddings",
    "impute",
    "impute_batch",
    "load_bank",
    "save_bank",
    "select_topk",
    "select_topk_batch",
    "topk",
]
