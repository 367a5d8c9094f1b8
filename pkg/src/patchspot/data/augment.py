"""Label-preserving patch augmentation over the 8-element dihedral group.

A transform index encodes a rotation by 0/90/180/270 degrees (low two bits)
optionally followed by a horizontal flip (bit 2). The expression vector of
an augmented pair is the untouched original: only pixels move.
"""

from __future__ import annotations

import numpy as np

from .types import PatchSpotPair

N_TRANSFORMS = 8
IDENTITY = 0


def dihedral_transform(patch: np.ndarray, op: int) -> np.ndarray:
    """Apply dihedral transform ``op`` in [0, 8) to an H x W x C patch."""
    if not 0 <= op < N_TRANSFORMS:
        raise ValueError(f"transform index {op} outside [0, {N_TRANSFORMS})")
    out = np.rot90(patch, k=op & 3)
    if op & 4:
        out = out[:, ::-1]
    return np.ascontiguousarray(out)


def sample_transforms(rng: np.random.Generator, n_pairs: int) -> np.ndarray:
    """Draw the per-epoch augmentation plan: two transform ids for each pair."""
    return rng.integers(0, N_TRANSFORMS, size=(n_pairs, 2))


def augment_pair(
    pair: PatchSpotPair, rng: np.random.Generator
) -> tuple[PatchSpotPair, PatchSpotPair]:
    """Two independently transformed copies of ``pair`` sharing its expression vector."""
    ops = rng.integers(0, N_TRANSFORMS, size=2)
    return tuple(
        PatchSpotPair(
            patch=dihedral_transform(pair.patch, int(op)),
            expression=pair.expression,
            slice_id=pair.slice_id,
            spot_id=pair.spot_id,
        )
        for op in ops
    )
