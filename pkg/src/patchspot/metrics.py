"""Evaluation metrics: per-gene RMSE and SSIM, top-gene hit rate, and summaries.

Matrices are laid out spots x genes; per-gene statistics reduce over axis 0
(the M spots). SSIM is computed on inputs that were max-scaled per gene
(truth and prediction scaled independently) and uses population moments
with stabilizers C1^2 and C2^2 (C1 = 0.01, C2 = 0.03 for unit-range data).
Hit@T asks, per spot, whether the predicted top-T gene set intersects the
true top-T set; rank ties go to the lower gene index.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptyInput, NonFiniteInput, ParseError, ShapeMismatch, TOutOfRange

HIT_LEVELS = (1, 2, 3)


@dataclass(frozen=True)
class SsimConfig:
    c1: float = 0.01
    c2: float = 0.03

    def __post_init__(self):
        if self.c1 <= 0 or self.c2 <= 0:
            raise ValueError("SSIM stabilizers must be positive")


@dataclass
class MetricsReport:
    rmse_per_gene: np.ndarray
    ssim_per_gene: np.ndarray
    rmse_median: float
    rmse_mean: float
    ssim_median: float
    ssim_mean: float
    hit_at: dict[int, float]
    n_spots: int

    def to_dict(self) -> dict:
        return {
            "rmse_median": self.rmse_median,
            "rmse_mean": self.rmse_mean,
            "ssim_median": self.ssim_median,
            "ssim_mean": self.ssim_mean,
            "hit_at": {str(t): v for t, v in self.hit_at.items()},
            "n_spots": self.n_spots,
            "n_genes": int(len(self.rmse_per_gene)),
            "rmse_per_gene": [float(v) for v in self.rmse_per_gene],
            "ssim_per_gene": [float(v) for v in self.ssim_per_gene],
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "MetricsReport":
        return cls(
            rmse_per_gene=np.array(payload["rmse_per_gene"], dtype=np.float64),
            ssim_per_gene=np.array(payload["ssim_per_gene"], dtype=np.float64),
            rmse_median=payload["rmse_median"],
            rmse_mean=payload["rmse_mean"],
            ssim_median=payload["ssim_median"],
            ssim_mean=payload["ssim_mean"],
            hit_at={int(t): v for t, v in payload["hit_at"].items()},
            n_spots=payload["n_spots"],
        )


def _check_pair(truth: np.ndarray, prediction: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    truth = np.asarray(truth, dtype=np.float64)
    prediction = np.asarray(prediction, dtype=np.float64)
    if truth.ndim != 2 or prediction.ndim != 2:
        raise ShapeMismatch("expected spots x genes matrices")
    if truth.shape != prediction.shape:
        raise ShapeMismatch(f"truth {truth.shape} vs prediction {prediction.shape}")
    if not (np.isfinite(truth).all() and np.isfinite(prediction).all()):
        raise NonFiniteInput("metric inputs must be finite")
    return truth, prediction


def rmse_per_gene(truth: np.ndarray, prediction: np.ndarray) -> np.ndarray:
    """Per gene: sqrt of the mean squared error over the M spots."""
    truth, prediction = _check_pair(truth, prediction)
    return np.sqrt(np.mean((prediction - truth) ** 2, axis=0))


def scale_by_max(matrix: np.ndarray) -> np.ndarray:
    """Divide each gene column by its max over spots; all-zero genes stay zero."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise ShapeMismatch("expected a spots x genes matrix")
    peaks = matrix.max(axis=0, keepdims=True)
    return np.divide(matrix, peaks, out=np.zeros_like(matrix), where=peaks != 0)


def ssim_per_gene(
    truth: np.ndarray, prediction: np.ndarray, cfg: SsimConfig = SsimConfig()
) -> np.ndarray:
    """Structural similarity per gene on max-scaled inputs, population moments."""
    truth, prediction = _check_pair(truth, prediction)
    mu_t = truth.mean(axis=0)
    mu_p = prediction.mean(axis=0)
    var_t = truth.var(axis=0)
    var_p = prediction.var(axis=0)
    cov = ((truth - mu_t) * (prediction - mu_p)).mean(axis=0)
    c1sq, c2sq = cfg.c1**2, cfg.c2**2
    numerator = (2.0 * mu_p * mu_t + c1sq) * (2.0 * cov + c2sq)
    denominator = (mu_p**2 + mu_t**2 + c1sq) * (var_p + var_t + c2sq)
    return numerator / denominator


def _top_t_sets(matrix: np.ndarray, t: int) -> list[set[int]]:
    gene_idx = np.arange(matrix.shape[1])
    return [set(np.lexsort((gene_idx, -row))[:t].tolist()) for row in matrix]


def hit_at_t(truth: np.ndarray, prediction: np.ndarray, t: int) -> float:
    """Fraction of spots whose predicted and true top-T gene sets overlap."""
    truth, prediction = _check_pair(truth, prediction)
    n_spots, n_genes = truth.shape
    if not 1 <= t <= n_genes:
        raise TOutOfRange(f"T={t} outside [1, {n_genes}]")
    if n_spots == 0:
        raise EmptyInput("no spots to score")
    hits = [
        bool(p & q) for p, q in zip(_top_t_sets(prediction, t), _top_t_sets(truth, t))
    ]
    return float(np.mean(hits))


def summarize(
    rmse: np.ndarray, ssim: np.ndarray, hits: dict[int, float], n_spots: int
) -> MetricsReport:
    """Median/mean rollups (even-length median: mean of the middle two)."""
    rmse = np.asarray(rmse, dtype=np.float64)
    ssim = np.asarray(ssim, dtype=np.float64)
    if rmse.size == 0 or ssim.size == 0:
        raise EmptyInput("nothing to summarize")
    return MetricsReport(
        rmse_per_gene=rmse,
        ssim_per_gene=ssim,
        rmse_median=float(np.median(rmse)),
        rmse_mean=float(np.mean(rmse)),
        ssim_median=float(np.median(ssim)),
        ssim_mean=float(np.mean(ssim)),
        hit_at=dict(hits),
        n_spots=n_spots,
    )


def evaluate_predictions(
    truth: np.ndarray,
    prediction: np.ndarray,
    cfg: SsimConfig = SsimConfig(),
    hit_levels: tuple[int, ...] = HIT_LEVELS,
) -> MetricsReport:
    """Full report: RMSE on raw values, SSIM on max-scaled values, Hit@{1,2,3}."""
    truth, prediction = _check_pair(truth, prediction)
    if truth.shape[0] == 0:
        raise EmptyInput("no spots to evaluate")
    rmse = rmse_per_gene(truth, prediction)
    ssim = ssim_per_gene(scale_by_max(truth), scale_by_max(prediction), cfg)
    hits = {t: hit_at_t(truth, prediction, t) for t in hit_levels}
    return summarize(rmse, ssim, hits, n_spots=truth.shape[0])


def save_report(report: MetricsReport, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")


def load_report(path: str | Path) -> MetricsReport:
    path = Path(path)
    if not path.exists():
        raise ParseError(f"metrics report not found: {path}")
    return MetricsReport.from_dict(json.loads(path.read_text()))


def save_per_gene_csv(
    report: MetricsReport, gene_names: tuple[str, ...], path: str | Path
) -> None:
    if len(gene_names) != len(report.rmse_per_gene):
        raise ShapeMismatch(
            f"{len(gene_names)} gene names vs {len(report.rmse_per_gene)} metric rows"
        )
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["gene", "rmse", "ssim"])
        for gene, r, s in zip(gene_names, report.rmse_per_gene, report.ssim_per_gene):
            writer.writerow([gene, f"{r:.17g}", f"{s:.17g}"])
