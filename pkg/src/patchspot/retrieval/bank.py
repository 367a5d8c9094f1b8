"""Reference embedding bank and top-K expression imputation.

The bank pairs eval-mode patch embeddings with the matching expression
vectors. A query patch is embedded, scored against every bank row by raw
dot product, and its expression predicted as the arithmetic mean of the
K best rows' expressions. Banks remember the fingerprint of the
checkpoint that built them; querying with a different checkpoint fails
fast instead of silently mixing embedding spaces.

On disk a bank is a directory bundle: ``bank.embeddings.csv`` and
``bank.expressions.csv`` (headerless float matrices, 9 significant digits:
lossless for float32), ``bank.ids.csv`` (slice_id, spot_id) and
``bank.meta.json`` (n, d, d_o, fingerprint).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from ..data.types import PatchSpotPair
from ..errors import FingerprintMismatch, KOutOfRange, ParseError, ShapeMismatch
from ..training import Checkpoint
from .topk import select_topk


@dataclass
class EmbeddingBank:
    embeddings: np.ndarray  # (n, d_o) float32
    expressions: np.ndarray  # (n, d) float32, row-aligned with embeddings
    ids: list[tuple[str, str]]  # (slice_id, spot_id)
    fingerprint: str

    def __post_init__(self):
        if self.embeddings.shape[0] != self.expressions.shape[0] or len(self.ids) != self.embeddings.shape[0]:
            raise ShapeMismatch(
                f"bank rows disagree: {self.embeddings.shape[0]} embeddings, "
                f"{self.expressions.shape[0]} expressions, {len(self.ids)} ids"
            )
        if not (np.isfinite(self.embeddings).all() and np.isfinite(self.expressions).all()):
            raise ShapeMismatch("bank contains non-finite values")

    @property
    def n(self) -> int:
        return self.embeddings.shape[0]


@dataclass
class RetrievalResult:
    indices: np.ndarray  # (K,) int64, distinct
    scores: np.ndarray  # (K,) float64, non-increasing
    imputed: np.ndarray  # (d,) float64 mean of the K neighbor expressions


def _to_tensor(patches: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(patches, dtype=np.float32)).permute(0, 3, 1, 2)


def embed_patches(checkpoint: Checkpoint, pairs: list[PatchSpotPair], batch_size: int | None = None) -> np.ndarray:
    """Eval-mode embeddings for every pair's patch, in order."""
    image_enc, _ = checkpoint.encoders()
    image_enc.eval()
    if batch_size is None:
        batch_size = int(checkpoint.config["batch_size"])
    rows = []
    with torch.no_grad():
        for start in range(0, len(pairs), batch_size):
            chunk = pairs[start : start + batch_size]
            x = _to_tensor(np.stack([p.patch for p in chunk]))
            rows.append(image_enc(x).numpy())
    if not rows:
        return np.zeros((0, int(checkpoint.config["d_o"])), dtype=np.float32)
    return np.concatenate(rows).astype(np.float32)


def _embed_single(checkpoint: Checkpoint, patch: np.ndarray) -> np.ndarray:
    """One patch through the image encoder as a singleton batch.

    Used by both single and batched imputation so their embeddings (and
    therefore neighbors) are identical by construction.
    """
    image_enc, _ = checkpoint.encoders()
    image_enc.eval()
    with torch.no_grad():
        return image_enc(_to_tensor(patch[None])).numpy()[0]


def build_bank(checkpoint: Checkpoint, pairs: list[PatchSpotPair]) -> EmbeddingBank:
    """Embed every reference pair (un-augmented) and keep its expression alongside."""
    d = int(checkpoint.config["d"])
    for p in pairs:
        if len(p.expression) != d:
            raise ShapeMismatch(
                f"pair {p.key}: expression length {len(p.expression)} != checkpoint d={d}"
            )
    return EmbeddingBank(
        embeddings=embed_patches(checkpoint, pairs),
        expressions=(
            np.stack([p.expression for p in pairs]).astype(np.float32)
            if pairs
            else np.zeros((0, d), dtype=np.float32)
        ),
        ids=[p.key for p in pairs],
        fingerprint=checkpoint.fingerprint,
    )


def topk(query: np.ndarray, bank: EmbeddingBank, k: int) -> tuple[np.ndarray, np.ndarray]:
    """K most similar bank rows by dot product; ties go to the lower index."""
    if not 1 <= k <= bank.n:
        raise KOutOfRange(f"K={k} outside [1, {bank.n}]")
    query = np.asarray(query, dtype=np.float64)
    if query.shape != (bank.embeddings.shape[1],):
        raise ShapeMismatch(
            f"query shape {query.shape} != (d_o,) = ({bank.embeddings.shape[1]},)"
        )
    scores = bank.embeddings.astype(np.float64) @ query
    indices = select_topk(scores, k)
    return indices, scores[indices]


def _check_fingerprint(checkpoint: Checkpoint, bank: EmbeddingBank) -> None:
    if checkpoint.fingerprint != bank.fingerprint:
        raise FingerprintMismatch(
            "bank was built by a different checkpoint "
            f"({bank.fingerprint[:12]}… vs {checkpoint.fingerprint[:12]}…)"
        )


def impute(
    query_patch: np.ndarray, checkpoint: Checkpoint, bank: EmbeddingBank, k: int
) -> RetrievalResult:
    """Embed one patch, retrieve its K neighbors, and average their expressions."""
    _check_fingerprint(checkpoint, bank)
    embedding = _embed_single(checkpoint, query_patch)
    indices, scores = topk(embedding, bank, k)
    imputed = bank.expressions[indices].mean(axis=0, dtype=np.float64)
    return RetrievalResult(indices=indices, scores=scores, imputed=imputed)


def impute_batch(
    query_pairs: list[PatchSpotPair], checkpoint: Checkpoint, bank: EmbeddingBank, k: int
) -> np.ndarray:
    """Row i of the result equals ``impute`` on query i. Empty input, empty matrix."""
    _check_fingerprint(checkpoint, bank)
    if not query_pairs:
        return np.zeros((0, bank.expressions.shape[1]))
    out = np.empty((len(query_pairs), bank.expressions.shape[1]))
    for i, pair in enumerate(query_pairs):
        embedding = _embed_single(checkpoint, pair.patch)
        indices, _ = topk(embedding, bank, k)
        out[i] = bank.expressions[indices].mean(axis=0, dtype=np.float64)
    return out


def export_embeddings(
    bank: EmbeddingBank,
    query_embeddings: np.ndarray,
    query_ids: list[tuple[str, str]],
    path: str | Path,
) -> None:
    """CSV of reference and query embeddings: id, set, e1..e_{d_o}."""
    if query_embeddings.shape[0] != len(query_ids):
        raise ShapeMismatch("query embeddings and ids disagree in length")
    d_o = bank.embeddings.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "set", *[f"e{i + 1}" for i in range(d_o)]])
        for (slice_id, spot_id), row in zip(bank.ids, bank.embeddings):
            writer.writerow([f"{slice_id}:{spot_id}", "reference", *[f"{v:.9g}" for v in row]])
        for (slice_id, spot_id), row in zip(query_ids, query_embeddings):
            writer.writerow([f"{slice_id}:{spot_id}", "query", *[f"{v:.9g}" for v in row]])


def save_bank(bank: EmbeddingBank, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    np.savetxt(directory / "bank.embeddings.csv", bank.embeddings, fmt="%.9g", delimiter=",")
    np.savetxt(directory / "bank.expressions.csv", bank.expressions, fmt="%.9g", delimiter=",")
    with open(directory / "bank.ids.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["slice_id", "spot_id"])
        writer.writerows(bank.ids)
    meta = {
        "n": bank.n,
        "d": int(bank.expressions.shape[1]),
        "d_o": int(bank.embeddings.shape[1]),
        "fingerprint": bank.fingerprint,
    }
    (directory / "bank.meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_bank(directory: str | Path) -> EmbeddingBank:
    directory = Path(directory)
    meta_path = directory / "bank.meta.json"
    if not meta_path.exists():
        raise ParseError(f"bank metadata not found: {meta_path}")
    meta = json.loads(meta_path.read_text())
    embeddings = np.loadtxt(directory / "bank.embeddings.csv", delimiter=",", ndmin=2).astype(np.float32)
    expressions = np.loadtxt(directory / "bank.expressions.csv", delimiter=",", ndmin=2).astype(np.float32)
    with open(directory / "bank.ids.csv", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["slice_id", "spot_id"]:
            raise ParseError(f"{directory}/bank.ids.csv: header must be slice_id,spot_id")
        ids = [(row[0], row[1]) for row in reader]
    if embeddings.shape != (meta["n"], meta["d_o"]) or expressions.shape != (meta["n"], meta["d"]):
        raise ParseError(
            f"bank files disagree with metadata: embeddings {embeddings.shape}, "
            f"expressions {expressions.shape}, meta {meta}"
        )
    return EmbeddingBank(
        embeddings=embeddings, expressions=expressions, ids=ids, fingerprint=meta["fingerprint"]
    )
