"""Count normalization: depth scaling to a fixed total followed by log1p."""

from __future__ import annotations

import numpy as np

from ..errors import NegativeCount, ShapeMismatch

TARGET_TOTAL = 10_000.0


def normalize_expression(counts: np.ndarray, target_total: float = TARGET_TOTAL) -> np.ndarray:
    """Scale each spot's counts to sum to ``target_total``, then apply log(1+v).

    Spots whose total is zero are left as all-zero rows. Input is a
    spots x genes matrix of raw non-negative counts.
    """
    counts = np.asarray(counts, dtype=np.float64)
    if counts.ndim != 2:
        raise ShapeMismatch(f"expected a spots x genes matrix, got ndim={counts.ndim}")
    if counts.size and counts.min() < 0:
        bad = np.argwhere(counts < 0)[0]
        raise NegativeCount(f"negative count at spot {bad[0]}, gene {bad[1]}")
    totals = counts.sum(axis=1, keepdims=True)
    scale = np.divide(
        target_total, totals, out=np.zeros_like(totals), where=totals > 0
    )
    return np.log1p(counts * scale)


def standardize_per_slice(matrix: np.ndarray) -> np.ndarray:
    """Optional per-slice z-scoring hook (per gene, population std).

    Disabled by default in the pipeline: it produces signed values, which the
    standard pair-building path does not expect. Provided for cross-slice
    variability experiments. Genes with zero variance map to zero.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise ShapeMismatch(f"expected a spots x genes matrix, got ndim={matrix.ndim}")
    mean = matrix.mean(axis=0, keepdims=True)
    std = matrix.std(axis=0, keepdims=True)
    centered = matrix - mean
    return np.divide(centered, std, out=np.zeros_like(centered), where=std > 0)
