"""Core data containers for slides, spots, gene panels, and training pairs."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import NegativeCount, ShapeMismatch

PATCH_SIZE = 256
HALF_PATCH = PATCH_SIZE // 2


@dataclass(frozen=True)
class SpotRecord:
    """One capture spot: pixel coordinates plus its raw gene-count vector.

    ``gene_names`` is shared (by reference) across all spots of a slice.
    """

    slice_id: str
    spot_id: str
    x: int
    y: int
    counts: np.ndarray
    gene_names: tuple[str, ...]

    def __post_init__(self):
        if self.x < 0 or self.y < 0:
            raise ShapeMismatch(f"spot {self.spot_id}: coordinates must be non-negative")
        if len(self.counts) != len(self.gene_names):
            raise ShapeMismatch(
                f"spot {self.spot_id}: {len(self.counts)} counts vs {len(self.gene_names)} gene names"
            )
        if np.any(np.asarray(self.counts) < 0):
            raise NegativeCount(f"spot {self.spot_id}: negative count")


@dataclass
class SliceDataset:
    """A slide image in [0, 1] RGB plus its spot table."""

    slice_id: str
    image: np.ndarray  # (H, W, 3) float32 in [0, 1]
    spots: list[SpotRecord]
    gene_names: tuple[str, ...]

    def __post_init__(self):
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise ShapeMismatch(f"slice {self.slice_id}: image must be H x W x 3")
        h, w = self.image.shape[:2]
        if h < PATCH_SIZE or w < PATCH_SIZE:
            raise ShapeMismatch(f"slice {self.slice_id}: image {h}x{w} smaller than {PATCH_SIZE}")
        seen = set()
        for spot in self.spots:
            if spot.spot_id in seen:
                raise ShapeMismatch(f"slice {self.slice_id}: duplicate spot id {spot.spot_id}")
            seen.add(spot.spot_id)
            if spot.x >= w or spot.y >= h:
                raise ShapeMismatch(
                    f"slice {self.slice_id}: spot {spot.spot_id} at ({spot.x}, {spot.y}) "
                    f"outside {w}x{h} slide"
                )

    def counts_matrix(self) -> np.ndarray:
        """Raw counts stacked as a spots x genes float64 matrix."""
        if not self.spots:
            return np.zeros((0, len(self.gene_names)))
        return np.stack([np.asarray(s.counts, dtype=np.float64) for s in self.spots])


@dataclass(frozen=True)
class GenePanel:
    """An ordered gene selection (highly-expressed or highly-variable mode)."""

    mode: str  # "heg" | "hvg"
    genes: tuple[str, ...]
    scores: np.ndarray  # selection score per gene, aligned with ``genes``

    def __post_init__(self):
        if self.mode not in ("heg", "hvg"):
            raise ShapeMismatch(f"unknown panel mode {self.mode!r}")
        if len(self.genes) != len(set(self.genes)):
            raise ShapeMismatch("panel genes must be unique")
        if len(self.scores) != len(self.genes):
            raise ShapeMismatch("panel scores and genes differ in length")

    @property
    def d(self) -> int:
        return len(self.genes)


@dataclass
class PatchSpotPair:
    """The training unit: a 256x256 RGB patch and its panel-ordered expression vector."""

    patch: np.ndarray  # (256, 256, 3) float32 in [0, 1]
    expression: np.ndarray  # (d,) float32, non-negative
    slice_id: str
    spot_id: str

    def __post_init__(self):
        if self.patch.shape != (PATCH_SIZE, PATCH_SIZE, 3):
            raise ShapeMismatch(f"patch shape {self.patch.shape} != (256, 256, 3)")
        if self.expression.ndim != 1:
            raise ShapeMismatch("expression must be a vector")

    @property
    def key(self) -> tuple[str, str]:
        return (self.slice_id, self.spot_id)


@dataclass
class PairBuildReport:
    """Bookkeeping from pair construction: how many spots were skipped and why."""

    slice_id: str
    n_spots: int = 0
    n_built: int = 0
    n_skipped: int = 0
    skipped_spot_ids: list[str] = field(default_factory=list)
