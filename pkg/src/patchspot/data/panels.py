"""Gene panel selection: highly-expressed (HEG) and highly-variable (HVG) modes.

Both selectors operate on normalized expression matrices and break score
ties by lower gene index, so panels are deterministic and independent of
slice ordering.
"""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from ..errors import EmptyInput, ShapeMismatch
from .types import GenePanel

PANEL_CAP = 3500


def _ranked_by_score_desc(scores: np.ndarray) -> np.ndarray:
    """Gene indices sorted by (score descending, index ascending)."""
    idx = np.arange(len(scores))
    return np.lexsort((idx, -scores))


def _check_slices(slices: Sequence[np.ndarray], n_genes: int) -> None:
    if not slices:
        raise EmptyInput("no slices given")
    for i, m in enumerate(slices):
        if m.ndim != 2 or m.shape[1] != n_genes:
            raise ShapeMismatch(f"slice {i}: expected spots x {n_genes} matrix, got {m.shape}")
        if m.shape[0] == 0:
            raise EmptyInput(f"slice {i} has no spots")


def select_heg(
    slices: Sequence[np.ndarray],
    gene_names: Sequence[str],
    panel_size: int = PANEL_CAP,
) -> GenePanel:
    """Top genes by mean normalized expression pooled over all spots of all slices."""
    n_genes = len(gene_names)
    _check_slices(slices, n_genes)
    total = np.zeros(n_genes)
    n_spots = 0
    for m in slices:
        total += m.sum(axis=0)
        n_spots += m.shape[0]
    means = total / n_spots
    keep = _ranked_by_score_desc(means)[: min(panel_size, n_genes)]
    return GenePanel(
        mode="heg",
        genes=tuple(gene_names[i] for i in keep),
        scores=means[keep],
    )


def select_hvg(
    slices: Sequence[np.ndarray],
    gene_names: Sequence[str],
    panel_size: int = PANEL_CAP,
) -> GenePanel:
    """Union of each slice's top genes by variance, re-ranked by summed variance.

    Per slice, genes are ranked by population variance and the top
    ``panel_size`` kept; the union of those per-slice selections is then
    ranked by variance summed across all slices and truncated to
    ``min(panel_size, union size)``.
    """
    n_genes = len(gene_names)
    _check_slices(slices, n_genes)
    variances = np.stack([m.var(axis=0) for m in slices])  # slices x genes
    union: set[int] = set()
    for var in variances:
        union.update(_ranked_by_score_desc(var)[: min(panel_size, n_genes)].tolist())
    summed = variances.sum(axis=0)
    candidates = np.array(sorted(union))
    order = np.lexsort((candidates, -summed[candidates]))
    keep = candidates[order][: min(panel_size, len(candidates))]
    return GenePanel(
        mode="hvg",
        genes=tuple(gene_names[i] for i in keep),
        scores=summed[keep],
    )
