"""File formats: dataset manifest, pairs archive, panel CSV, and summary JSON.

Formats
-------
Manifest (``manifest.json``)::

    { "slices": [ { "slice_id": "A", "image": "a.png", "spots": "a.csv" } ] }

Relative ``image``/``spots`` paths resolve against the manifest's directory.

Spots CSV: header ``spot_id,x,y,<gene_1>,...,<gene_G>``; integer pixel
coordinates, non-negative real counts.

Pairs archive: a directory holding ``pairs.csv`` (``spot_id, slice_id``
followed by one column per panel gene) plus ``patches/<slice_id>_<spot_id>.png``
with the 256x256 RGB patch. Expression values are written with 17 significant
digits so a save/load round trip is lossless well below 1e-9.

Panel CSV: ``gene,score,rank`` with rank starting at 0.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np
from PIL import Image

from ..errors import ParseError, ShapeMismatch
from .types import GenePanel, PatchSpotPair, SliceDataset, SpotRecord

_RESERVED_SPOT_COLUMNS = ("spot_id", "x", "y")


def load_image(path: Path) -> np.ndarray:
    """Read an RGB image file into a float32 H x W x 3 array in [0, 1]."""
    if not path.exists():
        raise ParseError(f"image file not found: {path}")
    with Image.open(path) as img:
        rgb = img.convert("RGB")
        return np.asarray(rgb, dtype=np.float32) / 255.0


def save_image(array: np.ndarray, path: Path) -> None:
    """Write a float [0, 1] H x W x 3 array as an 8-bit PNG."""
    data = np.clip(np.asarray(array, dtype=np.float64), 0.0, 1.0)
    Image.fromarray(np.round(data * 255.0).astype(np.uint8)).save(path, format="PNG")


def _parse_spots_csv(path: Path, slice_id: str) -> tuple[tuple[str, ...], list[SpotRecord]]:
    if not path.exists():
        raise ParseError(f"spots file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty spots file") from None
        if tuple(header[:3]) != _RESERVED_SPOT_COLUMNS:
            raise ParseError(f"{path}: header must start with spot_id,x,y, got {header[:3]}")
        gene_names = tuple(header[3:])
        if not gene_names:
            raise ParseError(f"{path}: no gene columns")
        records: list[SpotRecord] = []
        for line_no, row in enumerate(reader, start=2):
            if len(row) != 3 + len(gene_names):
                raise ParseError(
                    f"{path}:{line_no}: expected {3 + len(gene_names)} fields, got {len(row)}"
                )
            spot_id = row[0]
            try:
                x, y = int(row[1]), int(row[2])
            except ValueError:
                raise ParseError(f"{path}:{line_no}: x/y must be integers") from None
            try:
                counts = np.array(row[3:], dtype=np.float64)
            except ValueError:
                raise ParseError(f"{path}:{line_no}: counts must be numeric") from None
            if counts.size and counts.min() < 0:
                gene = gene_names[int(np.argmin(counts))]
                raise ParseError(f"{path}:{line_no}: negative count for gene {gene}")
            if x < 0 or y < 0:
                raise ParseError(f"{path}:{line_no}: negative coordinates")
            records.append(
                SpotRecord(
                    slice_id=slice_id,
                    spot_id=spot_id,
                    x=x,
                    y=y,
                    counts=counts,
                    gene_names=gene_names,
                )
            )
    return gene_names, records


def load_manifest(path: str | Path) -> list[SliceDataset]:
    """Read a manifest and all slices it references."""
    path = Path(path)
    if not path.exists():
        raise ParseError(f"manifest not found: {path}")
    try:
        spec = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(spec, dict) or "slices" not in spec:
        raise ParseError(f"{path}: manifest must be an object with a 'slices' list")
    base = path.parent
    slices: list[SliceDataset] = []
    seen_ids: set[str] = set()
    for i, entry in enumerate(spec["slices"]):
        for key in ("slice_id", "image", "spots"):
            if key not in entry:
                raise ParseError(f"{path}: slices[{i}] missing field {key!r}")
        slice_id = entry["slice_id"]
        if slice_id in seen_ids:
            raise ParseError(f"{path}: duplicate slice_id {slice_id!r}")
        seen_ids.add(slice_id)
        image = load_image(base / entry["image"])
        gene_names, spots = _parse_spots_csv(base / entry["spots"], slice_id)
        try:
            slices.append(
                SliceDataset(slice_id=slice_id, image=image, spots=spots, gene_names=gene_names)
            )
        except ShapeMismatch as exc:
            raise ParseError(f"{path}: slices[{i}]: {exc}") from exc
    if not slices:
        raise ParseError(f"{path}: manifest lists no slices")
    return slices


def patch_filename(slice_id: str, spot_id: str) -> str:
    return f"{slice_id}_{spot_id}.png"


def save_pairs(pairs: list[PatchSpotPair], directory: str | Path, gene_names: tuple[str, ...]) -> None:
    """Write a pairs archive: pairs.csv plus one PNG per patch."""
    directory = Path(directory)
    patches_dir = directory / "patches"
    patches_dir.mkdir(parents=True, exist_ok=True)
    with open(directory / "pairs.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["spot_id", "slice_id", *gene_names])
        for pair in pairs:
            if len(pair.expression) != len(gene_names):
                raise ShapeMismatch(
                    f"pair {pair.key}: expression length {len(pair.expression)} "
                    f"!= {len(gene_names)} genes"
                )
            writer.writerow(
                [pair.spot_id, pair.slice_id]
                + [f"{float(v):.17g}" for v in pair.expression]
            )
            save_image(pair.patch, patches_dir / patch_filename(pair.slice_id, pair.spot_id))


def load_pairs(
    directory: str | Path, expected_genes: tuple[str, ...] | None = None
) -> tuple[list[PatchSpotPair], tuple[str, ...]]:
    """Read a pairs archive back; optionally validate its gene columns."""
    directory = Path(directory)
    csv_path = directory / "pairs.csv"
    if not csv_path.exists():
        raise ParseError(f"pairs archive missing {csv_path}")
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{csv_path}: empty file") from None
        if header[:2] != ["spot_id", "slice_id"]:
            raise ParseError(f"{csv_path}: header must start with spot_id,slice_id")
        gene_names = tuple(header[2:])
        if expected_genes is not None:
            missing = [g for g in expected_genes if g not in gene_names]
            if missing:
                raise ParseError(f"{csv_path}: missing expression column {missing[0]!r}")
            extra = [g for g in gene_names if g not in expected_genes]
            if extra:
                raise ParseError(f"{csv_path}: unexpected expression column {extra[0]!r}")
        pairs: list[PatchSpotPair] = []
        for line_no, row in enumerate(reader, start=2):
            if len(row) != 2 + len(gene_names):
                raise ParseError(
                    f"{csv_path}:{line_no}: expected {2 + len(gene_names)} fields, got {len(row)}"
                )
            spot_id, slice_id = row[0], row[1]
            try:
                expression = np.array(row[2:], dtype=np.float32)
            except ValueError:
                raise ParseError(f"{csv_path}:{line_no}: non-numeric expression value") from None
            patch_path = directory / "patches" / patch_filename(slice_id, spot_id)
            if not patch_path.exists():
                raise ParseError(f"{csv_path}:{line_no}: missing patch image {patch_path}")
            pairs.append(
                PatchSpotPair(
                    patch=load_image(patch_path),
                    expression=expression,
                    slice_id=slice_id,
                    spot_id=spot_id,
                )
            )
    return pairs, gene_names


def save_panel(panel: GenePanel, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["gene", "score", "rank"])
        for rank, (gene, score) in enumerate(zip(panel.genes, panel.scores)):
            writer.writerow([gene, f"{float(score):.17g}", rank])


def load_panel(path: str | Path, mode: str = "heg") -> GenePanel:
    path = Path(path)
    if not path.exists():
        raise ParseError(f"panel file not found: {path}")
    genes: list[str] = []
    scores: list[float] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["gene", "score", "rank"]:
            raise ParseError(f"{path}: header must be gene,score,rank")
        for line_no, row in enumerate(reader, start=2):
            if len(row) != 3:
                raise ParseError(f"{path}:{line_no}: expected 3 fields")
            genes.append(row[0])
            try:
                scores.append(float(row[1]))
            except ValueError:
                raise ParseError(f"{path}:{line_no}: non-numeric score") from None
    return GenePanel(mode=mode, genes=tuple(genes), scores=np.array(scores))


def save_summary(summary: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


def load_summary(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ParseError(f"summary not found: {path}")
    return json.loads(path.read_text())
