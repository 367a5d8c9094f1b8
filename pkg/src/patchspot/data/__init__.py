"""Data pipeline: ingestion, normalization, panel selection, pair building, augmentation."""

from .augment import IDENTITY, N_TRANSFORMS, augment_pair, dihedral_transform, sample_transforms
from .io import (
    load_image,
    load_manifest,
    load_pairs,
    load_panel,
    load_summary,
    save_image,
    save_pairs,
    save_panel,
    save_summary,
)
from .normalize import TARGET_TOTAL, normalize_expression, standardize_per_slice
from .panels import PANEL_CAP, select_heg, select_hvg
from .patches import build_pairs, extract_patch, panel_column_indices
from .types import (
    HALF_PATCH,
    PATCH_SIZE,
    GenePanel,
    PairBuildReport,
    PatchSpotPair,
    SliceDataset,
    SpotRecord,
)

__all__ = [
    "HALF_PATCH",
    "IDENTITY",
    "N_TRANSFORMS",
    "PANEL_CAP",
    "PATCH_SIZE",
    "TARGET_TOTAL",
    "GenePanel",
    "PairBuildReport",
    "PatchSpotPair",
    "SliceDataset",
    "SpotRecord",
    "augment_pair",
    "build_pairs",
    "dihedral_transform",
    "extract_patch",
    "load_image",
    "load_manifest",
    "load_pairs",
    "load_panel",
    "load_summary",
    "normalize_expression",
    "panel_column_indices",
    "sample_transforms",
    "save_image",
    "save_pairs",
    "save_panel",
    "save_summary",
    "select_heg",
    "select_hvg",
    "standardize_per_slice",
]
