"""patchspot: contrastive patch-spot embeddings with top-K expression imputation."""

from . import data, losses, metrics, retrieval, training
from .retrieval.topk import BACKEND as TOPK_BACKEND

__version__ = "0.1.0"

__all__ = ["TOPK_BACKEND", "data", "losses", "metrics", "retrieval", "training", "__version__"]
