"""Backend selection for the top-K kernel.

The compiled extension is preferred when present; otherwise (or when the
``PATCHSPOT_PURE_PYTHON`` environment variable is set to a non-zero value)
the NumPy fallback is used. Both expose ``topk_select`` / ``topk_select_batch``
with identical semantics, so callers never need to know which one is live.
"""

from __future__ import annotations

import os

import numpy as np

from . import _topk_fallback

if os.environ.get("PATCHSPOT_PURE_PYTHON", "0") not in ("", "0"):
    _impl = _topk_fallback
    BACKEND = "numpy"
else:
    try:
        from . import _topk as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        _impl = _topk_fallback
        BACKEND = "numpy"


def select_topk(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest scores, (score desc, index asc) ordered."""
    return _impl.topk_select(np.ascontiguousarray(scores, dtype=np.float64), int(k))


def select_topk_batch(scores: np.ndarray, k: int) -> np.ndarray:
    """Row-wise top-K indices for an m x n score matrix."""
    return _impl.topk_select_batch(np.ascontiguousarray(scores, dtype=np.float64), int(k))
