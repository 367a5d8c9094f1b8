"""Pure-NumPy top-K selection with the same contract as the compiled kernel.

Partition gives the k-th largest value in O(n); strictly-greater indices are
kept outright, the remainder is filled from tied values in ascending index
order, and only the k survivors pay the final (score desc, index asc) sort.
"""

from __future__ import annotations

import numpy as np


def topk_select(scores: np.ndarray, k: int) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    n = scores.shape[0]
    if k < 1 or k > n:
        raise ValueError(f"k={k} outside [1, {n}]")
    if k == n:
        candidates = np.arange(n)
    else:
        threshold = np.partition(scores, n - k)[n - k]
        above = np.flatnonzero(scores > threshold)
        fill = k - above.size
        if fill > 0:
            tied = np.flatnonzero(scores == threshold)[:fill]
            candidates = np.concatenate([above, tied])
        else:
            candidates = above
    order = np.lexsort((candidates, -scores[candidates]))
    return candidates[order].astype(np.int64)


def topk_select_batch(scores: np.ndarray, k: int) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2:
        raise ValueError(f"expected 2-D scores, got shape {scores.shape}")
    if scores.shape[0] == 0:
        return np.empty((0, k), dtype=np.int64)
    return np.stack([topk_select(row, k) for row in scores])
