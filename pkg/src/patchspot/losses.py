"""Contrastive losses over paired patch and spot embeddings.

The primary objective is image-centric: similarity logits between spot and
patch embeddings are trained against soft targets derived from patch-patch
similarities alone, so gradients concentrate on the image encoder. The two
CLIP-style baselines (soft intra-modal targets, hard diagonal targets) are
kept for ablations.

All functions are plain tensor ops and respect the dtype of their inputs;
log-softmax is computed with row-max subtraction for stability.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import NonFiniteInput, ShapeMismatch

LOSS_MODES = ("image_centric", "clip_soft", "clip_hard")


@dataclass
class LossConfig:
    """Temperature and mode for the contrastive objective.

    ``spot_term_weight`` interpolates the image-centric loss toward its
    symmetric counterpart: 0 removes the spot-side term entirely (the
    default objective), 0.5 recovers the soft CLIP baseline.
    """

    temperature: float = 1.0
    mode: str = "image_centric"
    spot_term_weight: float = 0.0

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if self.mode not in LOSS_MODES:
            raise ValueError(f"mode must be one of {LOSS_MODES}, got {self.mode!r}")
        if not 0.0 <= self.spot_term_weight <= 1.0:
            raise ValueError("spot_term_weight must lie in [0, 1]")


def _as_2d(t: torch.Tensor, name: str) -> torch.Tensor:
    if t.ndim != 2:
        raise ShapeMismatch(f"{name} must be 2-D, got shape {tuple(t.shape)}")
    return t


def cross_entropy(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Per-row cross entropy: row i is -sum_j targets[i,j] * logsoftmax(logits[i,:])[j].

    Callers are responsible for supplying target rows that sum to 1 with
    non-negative entries.
    """
    logits = _as_2d(torch.as_tensor(logits), "logits")
    targets = _as_2d(torch.as_tensor(targets), "targets")
    if logits.shape != targets.shape:
        raise ShapeMismatch(f"logits {tuple(logits.shape)} vs targets {tuple(targets.shape)}")
    if not bool(torch.isfinite(logits).all()) or not bool(torch.isfinite(targets).all()):
        raise NonFiniteInput("cross_entropy received non-finite values")
    log_probs = torch.log_softmax(logits, dim=-1)
    return (-targets * log_probs).sum(dim=1)


def soft_targets(
    h_p: torch.Tensor,
    h_s: torch.Tensor | None,
    temperature: float,
    spot_term_weight: float = 0.0,
) -> torch.Tensor:
    """Row-softmax similarity targets.

    With ``spot_term_weight`` 0 the similarities are patch-patch only;
    otherwise the patch-patch and spot-spot similarity matrices are blended
    as (1-w)*sim_pp + w*sim_ss before the temperature-scaled softmax. Rows
    of the result sum to 1 and are strictly positive.
    """
    sim = h_p @ h_p.T
    if spot_term_weight > 0.0:
        if h_s is None:
            raise ShapeMismatch("spot embeddings required when spot_term_weight > 0")
        sim = (1.0 - spot_term_weight) * sim + spot_term_weight * (h_s @ h_s.T)
    return torch.softmax(sim / temperature, dim=-1)


def _check_embedding_batch(h_p: torch.Tensor, h_s: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    h_p = _as_2d(torch.as_tensor(h_p), "h_p")
    h_s = _as_2d(torch.as_tensor(h_s), "h_s")
    if h_p.shape != h_s.shape:
        raise ShapeMismatch(f"h_p {tuple(h_p.shape)} vs h_s {tuple(h_s.shape)}")
    if h_p.shape[0] < 1:
        raise ShapeMismatch("need at least one embedding row")
    return h_p, h_s


def _soft_contrastive(
    h_p: torch.Tensor, h_s: torch.Tensor, temperature: float, spot_term_weight: float
) -> torch.Tensor:
    h_p, h_s = _check_embedding_batch(h_p, h_s)
    logits = (h_s @ h_p.T) / temperature
    targets = soft_targets(h_p, h_s, temperature, spot_term_weight)
    image_side = cross_entropy(logits.T, targets.T)
    if spot_term_weight == 0.0:
        return image_side.mean()
    spot_side = cross_entropy(logits, targets)
    return ((1.0 - spot_term_weight) * image_side + spot_term_weight * spot_side).mean()


def image_centric_loss(h_p: torch.Tensor, h_s: torch.Tensor, cfg: LossConfig) -> torch.Tensor:
    """Image-centric contrastive loss (spot-side term removed by default)."""
    return _soft_contrastive(h_p, h_s, cfg.temperature, cfg.spot_term_weight)


def clip_soft_loss(h_p: torch.Tensor, h_s: torch.Tensor, cfg: LossConfig) -> torch.Tensor:
    """Symmetric soft-target baseline: blended intra-modal targets, both CE directions."""
    return _soft_contrastive(h_p, h_s, cfg.temperature, spot_term_weight=0.5)


def clip_hard_loss(h_p: torch.Tensor, h_s: torch.Tensor, cfg: LossConfig) -> torch.Tensor:
    """Symmetric hard-target baseline: one-hot diagonal targets on both directions."""
    h_p, h_s = _check_embedding_batch(h_p, h_s)
    logits = (h_s @ h_p.T) / cfg.temperature
    eye = torch.eye(h_p.shape[0], dtype=logits.dtype, device=logits.device)
    return (0.5 * (cross_entropy(logits, eye) + cross_entropy(logits.T, eye))).mean()


_LOSS_FNS = {
    "image_centric": image_centric_loss,
    "clip_soft": clip_soft_loss,
    "clip_hard": clip_hard_loss,
}


def contrastive_loss(h_p: torch.Tensor, h_s: torch.Tensor, cfg: LossConfig) -> torch.Tensor:
    """Dispatch on ``cfg.mode``."""
    return _LOSS_FNS[cfg.mode](h_p, h_s, cfg)
