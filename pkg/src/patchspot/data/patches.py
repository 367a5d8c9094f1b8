"""Patch extraction around spot coordinates and pair construction."""

from __future__ import annotations

import numpy as np

from ..errors import OutOfBounds, ParseError, ShapeMismatch
from .types import HALF_PATCH, PATCH_SIZE, GenePanel, PairBuildReport, PatchSpotPair, SliceDataset


def extract_patch(image: np.ndarray, x: int, y: int) -> np.ndarray:
    """Crop the 256x256 square whose corners are (x-128, y-128) and (x+128, y+128).

    Returns pixels [y-128, y+128) x [x-128, x+128). No padding is applied:
    a crop that would leave the slide raises OutOfBounds.
    """
    if image.ndim != 3 or image.shape[2] != 3:
        raise ShapeMismatch(f"image must be H x W x 3, got {image.shape}")
    h, w = image.shape[:2]
    x0, y0 = x - HALF_PATCH, y - HALF_PATCH
    x1, y1 = x + HALF_PATCH, y + HALF_PATCH
    if x0 < 0 or y0 < 0 or x1 > w or y1 > h:
        raise OutOfBounds(
            f"patch corners ({x0},{y0})-({x1},{y1}) exceed slide extent {w}x{h}"
        )
    return image[y0:y1, x0:x1]


def panel_column_indices(gene_names: tuple[str, ...], panel: GenePanel) -> np.ndarray:
    """Column index of each panel gene within a slice's gene table."""
    lookup = {g: i for i, g in enumerate(gene_names)}
    try:
        return np.array([lookup[g] for g in panel.genes], dtype=np.intp)
    except KeyError as exc:
        raise ParseError(f"panel gene {exc.args[0]!r} missing from slice gene table") from exc


def build_pairs(
    slice_ds: SliceDataset,
    normalized: np.ndarray,
    panel: GenePanel,
) -> tuple[list[PatchSpotPair], PairBuildReport]:
    """One pair per spot with an in-bounds patch; out-of-bounds spots are skipped.

    ``normalized`` is the slice's normalized expression matrix, row-aligned
    with ``slice_ds.spots``. Expression vectors are restricted to the panel's
    gene order.
    """
    if normalized.shape != (len(slice_ds.spots), len(slice_ds.gene_names)):
        raise ShapeMismatch(
            f"normalized matrix {normalized.shape} does not match "
            f"{len(slice_ds.spots)} spots x {len(slice_ds.gene_names)} genes"
        )
    cols = panel_column_indices(slice_ds.gene_names, panel)
    report = PairBuildReport(slice_id=slice_ds.slice_id, n_spots=len(slice_ds.spots))
    pairs: list[PatchSpotPair] = []
    for row, spot in enumerate(slice_ds.spots):
        try:
            patch = extract_patch(slice_ds.image, spot.x, spot.y)
        except OutOfBounds:
            report.n_skipped += 1
            report.skipped_spot_ids.append(spot.spot_id)
            continue
        pairs.append(
            PatchSpotPair(
                patch=np.ascontiguousarray(patch, dtype=np.float32),
                expression=normalized[row, cols].astype(np.float32),
                slice_id=slice_ds.slice_id,
                spot_id=spot.spot_id,
            )
        )
        report.n_built += 1
    return pairs, report
