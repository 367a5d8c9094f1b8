"""Synthetic clustered slide/spot datasets for demos and end-to-end tests.

Spots belong to latent clusters. Each cluster gets a distinct visual motif
(base color plus a texture pattern) painted into the 256x256 region around
its spot, and a distinct expression signature (one dominant peak gene plus
an elevated block) sampled with lognormal per-gene noise. Reference spots
are spread over several slices; query spots live on their own held-out
slice. Everything is written in the manifest/spots-CSV layout the CLI
consumes, and the true cluster of every spot is returned (and saved to
``clusters.csv``) so tests can check retrieval quality.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data.io import save_image
from .data.types import HALF_PATCH, PATCH_SIZE

_PALETTE = np.array(
    [
        (0.85, 0.20, 0.20),
        (0.20, 0.75, 0.25),
        (0.20, 0.35, 0.85),
        (0.90, 0.80, 0.20),
        (0.80, 0.25, 0.80),
        (0.25, 0.80, 0.80),
        (0.95, 0.55, 0.15),
        (0.55, 0.30, 0.70),
    ]
)

PEAK_COUNT = 400.0
BLOCK_COUNT = 25.0
BACKGROUND_COUNT = 2.0
REPORTER_COUNT = 20.0
EXPRESSION_NOISE_SIGMA = 0.4
LATENT_DIM = 3
TINT_SCALE = 0.12


@dataclass
class SyntheticDataset:
    root: Path
    manifest_path: Path
    reference_slice_ids: list[str]
    query_slice_id: str
    cluster_of: dict[tuple[str, str], int]
    n_clusters: int
    n_genes: int

    def clusters_for(self, keys: list[tuple[str, str]]) -> np.ndarray:
        return np.array([self.cluster_of[k] for k in keys])

    def peak_gene(self, cluster: int) -> int:
        return cluster * (self.n_genes // self.n_clusters)


def _motif_patch(
    cluster: int, latent: np.ndarray, rng: np.random.Generator, n_clusters: int
) -> np.ndarray:
    """A 256x256x3 patch: cluster base color and texture kind, per-spot identity.

    The spot's latent state tints the patch. The tint is pronounced enough
    for contrastive alignment to latch onto (the same latent also drives the
    spot's reporter genes) yet stays well below the separation between
    cluster base colors, so cluster membership dominates patch similarity.
    """
    base = _PALETTE[cluster % len(_PALETTE)]
    secondary = _PALETTE[(cluster + 3) % len(_PALETTE)]
    yy, xx = np.mgrid[0:PATCH_SIZE, 0:PATCH_SIZE]
    phase = int(rng.integers(0, 64))
    period = int(rng.integers(18, 49))
    pattern = cluster % 5
    if pattern == 0:
        mask = ((yy + phase) // period) % 2 == 0
    elif pattern == 1:
        mask = ((xx + phase) // period) % 2 == 0
    elif pattern == 2:
        mask = (((xx + phase) // period) + ((yy + phase) // period)) % 2 == 0
    elif pattern == 3:
        r = np.hypot(yy - PATCH_SIZE / 2, xx - PATCH_SIZE / 2)
        mask = ((r + phase) // period) % 2 == 0
    else:
        mask = ((xx + yy + phase) // period) % 2 == 0
    patch = np.where(mask[..., None], base, 0.55 * base + 0.45 * secondary)
    noise = rng.uniform(-0.04, 0.04, size=patch.shape)
    return np.clip(patch + TINT_SCALE * latent + noise, 0.0, 1.0)


def _expression_counts(
    cluster: int,
    latent: np.ndarray,
    rng: np.random.Generator,
    n_genes: int,
    n_clusters: int,
) -> np.ndarray:
    """Cluster signature (dominant peak gene + elevated block) plus noise.

    The last LATENT_DIM genes report the spot's latent state, mirroring how
    real expression covaries with visible tissue state; their counts stay far
    below the cluster peak so per-spot top genes are unaffected.
    """
    block = max(1, n_genes // n_clusters)
    base = np.full(n_genes, BACKGROUND_COUNT)
    start = cluster * block
    base[start : min(start + max(2, block // 2), n_genes)] = BLOCK_COUNT
    base[start] = PEAK_COUNT
    counts = base * rng.lognormal(0.0, EXPRESSION_NOISE_SIGMA, size=n_genes)
    counts[n_genes - LATENT_DIM :] = REPORTER_COUNT * np.exp(0.5 * latent)
    return counts


def _write_slice(
    root: Path,
    slice_id: str,
    n_spots: int,
    clusters: np.ndarray,
    rng: np.random.Generator,
    n_genes: int,
    n_clusters: int,
) -> tuple[str, str]:
    cols = int(math.ceil(math.sqrt(n_spots)))
    rows = int(math.ceil(n_spots / cols))
    slide = np.zeros((rows * PATCH_SIZE, cols * PATCH_SIZE, 3), dtype=np.float32)
    records = []
    for i in range(n_spots):
        r, c = divmod(i, cols)
        x = c * PATCH_SIZE + HALF_PATCH
        y = r * PATCH_SIZE + HALF_PATCH
        latent = rng.normal(0.0, 1.0, size=LATENT_DIM)
        slide[r * PATCH_SIZE : (r + 1) * PATCH_SIZE, c * PATCH_SIZE : (c + 1) * PATCH_SIZE] = (
            _motif_patch(int(clusters[i]), latent, rng, n_clusters)
        )
        counts = _expression_counts(int(clusters[i]), latent, rng, n_genes, n_clusters)
        records.append((f"spot{i:04d}", x, y, counts))
    image_name = f"{slice_id}.png"
    spots_name = f"{slice_id}.csv"
    save_image(slide, root / image_name)
    with open(root / spots_name, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["spot_id", "x", "y", *[f"gene{g:03d}" for g in range(n_genes)]])
        for spot_id, x, y, counts in records:
            writer.writerow([spot_id, x, y, *[f"{v:.6f}" for v in counts]])
    return image_name, spots_name


def generate_dataset(
    root: str | Path,
    n_reference: int = 500,
    n_query: int = 100,
    n_clusters: int = 5,
    n_genes: int = 64,
    reference_slices: int = 5,
    seed: int = 7,
) -> SyntheticDataset:
    """Write a full synthetic dataset under ``root`` and return its description."""
    if n_genes < n_clusters:
        raise ValueError("need at least one gene per cluster")
    root = Path(root)
    if n_genes < n_clusters + LATENT_DIM:
        raise ValueError("need room for cluster signatures plus reporter genes")
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    manifest_entries = []
    cluster_of: dict[tuple[str, str], int] = {}
    per_slice = [n_reference // reference_slices] * reference_slices
    per_slice[-1] += n_reference - sum(per_slice)
    slice_ids = [f"ref{j}" for j in range(reference_slices)]
    for slice_id, n_spots in zip(slice_ids, per_slice):
        clusters = rng.permutation(np.arange(n_spots) % n_clusters)
        image_name, spots_name = _write_slice(
            root, slice_id, n_spots, clusters, rng, n_genes, n_clusters
        )
        manifest_entries.append({"slice_id": slice_id, "image": image_name, "spots": spots_name})
        for i, cl in enumerate(clusters):
            cluster_of[(slice_id, f"spot{i:04d}")] = int(cl)

    query_id = "query"
    clusters = rng.permutation(np.arange(n_query) % n_clusters)
    image_name, spots_name = _write_slice(
        root, query_id, n_query, clusters, rng, n_genes, n_clusters
    )
    manifest_entries.append({"slice_id": query_id, "image": image_name, "spots": spots_name})
    for i, cl in enumerate(clusters):
        cluster_of[(query_id, f"spot{i:04d}")] = int(cl)

    manifest_path = root / "manifest.json"
    manifest_path.write_text(json.dumps({"slices": manifest_entries}, indent=2) + "\n")
    with open(root / "clusters.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["slice_id", "spot_id", "cluster"])
        for (slice_id, spot_id), cl in sorted(cluster_of.items()):
            writer.writerow([slice_id, spot_id, cl])

    return SyntheticDataset(
        root=root,
        manifest_path=manifest_path,
        reference_slice_ids=slice_ids,
        query_slice_id=query_id,
        cluster_of=cluster_of,
        n_clusters=n_clusters,
        n_genes=n_genes,
    )


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description="Generate a synthetic clustered dataset.")
    parser.add_argument("out", help="output directory")
    parser.add_argument("--reference", type=int, default=500)
    parser.add_argument("--query", type=int, default=100)
    parser.add_argument("--clusters", type=int, default=5)
    parser.add_argument("--genes", type=int, default=64)
    parser.add_argument("--slices", type=int, default=5)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args(argv)
    ds = generate_dataset(
        args.out,
        n_reference=args.reference,
        n_query=args.query,
        n_clusters=args.clusters,
        n_genes=args.genes,
        reference_slices=args.slices,
        seed=args.seed,
    )
    print(f"wrote manifest to {ds.manifest_path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
