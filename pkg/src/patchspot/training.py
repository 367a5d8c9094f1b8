"""Seeded contrastive training with an 80/20 split and best-test-loss checkpointing.

Each epoch optionally doubles the training pool with paired dihedral
augmentation (two transformed copies per pair, expressions untouched),
shuffles it without replacement, and steps AdamW on the configured loss.
After every epoch both splits are re-evaluated in eval mode; the parameters
with the lowest test loss are the ones a checkpoint keeps.

All randomness (split, parameter init, dropout, augmentation plans, batch
order) derives from ``TrainConfig.seed``, so runs are bit-reproducible on
one platform.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .data.augment import IDENTITY, dihedral_transform, sample_transforms
from .data.types import PatchSpotPair
from .encoders import (
    ImageEncoder,
    SpotEncoder,
    encoder_state_arrays,
    load_state_arrays,
    state_fingerprint,
)
from .errors import EmptyInput, NonFiniteLoss, ParseError, ShapeMismatch, TooFewPairs
from .losses import LossConfig, contrastive_loss

_AUGMENT_STREAM = 101
_SHUFFLE_STREAM = 202


@dataclass
class TrainConfig:
    epochs: int = 15
    batch_size: int = 128
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    split_fraction: float = 0.8
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)
    augment: bool = True
    d_o: int = 256
    backbone: str = "compact"
    feature_dim: int = 32
    dropout: float = 0.1
    backbone_weights: str | None = None

    def __post_init__(self):
        if not 0.0 < self.split_fraction < 1.0:
            raise ValueError("split_fraction must lie strictly between 0 and 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 for contrastive batches")


@dataclass
class TrainInstrumentation:
    """Counters tests use to verify the test split stays untouched."""

    epoch_sizes: list[int] = field(default_factory=list)
    augment_draws: int = 0
    update_steps: int = 0
    trained_keys: set = field(default_factory=set)
    test_keys: set = field(default_factory=set)


@dataclass
class Checkpoint:
    """Encoder parameters (canonical names), config echo, and loss curves."""

    params: dict[str, np.ndarray]
    config: dict
    best_test_loss: float
    epoch_of_best: int
    history: list[dict]
    _encoders: tuple[ImageEncoder, SpotEncoder] | None = field(
        default=None, repr=False, compare=False
    )

    @property
    def fingerprint(self) -> str:
        return state_fingerprint(self.params)

    def encoders(self) -> tuple[ImageEncoder, SpotEncoder]:
        """Instantiate (and cache) encoders carrying this checkpoint's parameters."""
        if self._encoders is None:
            with torch.random.fork_rng():
                torch.manual_seed(0)
                image_enc = ImageEncoder(
                    d_o=int(self.config["d_o"]),
                    backbone=self.config["backbone"],
                    feature_dim=int(self.config["feature_dim"]),
                    dropout=float(self.config["dropout"]),
                )
                spot_enc = SpotEncoder(
                    d=int(self.config["d"]),
                    d_o=int(self.config["d_o"]),
                    dropout=float(self.config["dropout"]),
                )
            load_state_arrays(image_enc, spot_enc, self.params)
            self._encoders = (image_enc, spot_enc)
        return self._encoders

    def loss_config(self) -> LossConfig:
        return LossConfig(
            temperature=float(self.config["temperature"]),
            mode=self.config["loss_mode"],
            spot_term_weight=float(self.config.get("spot_term_weight", 0.0)),
        )


def split_dataset(
    pairs: list[PatchSpotPair], fraction: float, seed: int
) -> tuple[list[PatchSpotPair], list[PatchSpotPair]]:
    """Seeded shuffle, then split at floor(n * fraction): disjoint and covering."""
    if len(pairs) < 2:
        raise TooFewPairs(f"need at least 2 pairs to split, got {len(pairs)}")
    order = np.random.default_rng(seed).permutation(len(pairs))
    cut = int(np.floor(len(pairs) * fraction))
    train = [pairs[i] for i in order[:cut]]
    test = [pairs[i] for i in order[cut:]]
    return train, test


def _check_pairs(pairs: list[PatchSpotPair]) -> int:
    if not pairs:
        raise EmptyInput("no pairs to train on")
    d = len(pairs[0].expression)
    for p in pairs:
        if len(p.expression) != d:
            raise ShapeMismatch(
                f"pair {p.key} has expression length {len(p.expression)}, expected {d}"
            )
    return d


def _batch_tensors(
    pairs: list[PatchSpotPair], entries: list[tuple[int, int]]
) -> tuple[torch.Tensor, torch.Tensor]:
    patches = np.stack(
        [
            dihedral_transform(pairs[i].patch, op) if op != IDENTITY else pairs[i].patch
            for i, op in entries
        ]
    )
    exprs = np.stack([pairs[i].expression for i, _ in entries])
    x = torch.from_numpy(np.ascontiguousarray(patches)).permute(0, 3, 1, 2).contiguous()
    return x, torch.from_numpy(exprs)


def _evaluate_split(
    image_enc: ImageEncoder,
    spot_enc: SpotEncoder,
    loss_cfg: LossConfig,
    pairs: list[PatchSpotPair],
    batch_size: int,
) -> float:
    """Mean loss over fixed-order eval batches (no augmentation, no updates).

    A trailing batch is kept when it still holds >= 2 pairs; a singleton
    remainder is skipped since a 1-pair contrastive batch is degenerate.
    """
    image_enc.eval()
    spot_enc.eval()
    losses: list[float] = []
    with torch.no_grad():
        for start in range(0, len(pairs), batch_size):
            chunk = pairs[start : start + batch_size]
            if len(chunk) < 2:
                continue
            x, s = _batch_tensors(pairs, [(start + j, IDENTITY) for j in range(len(chunk))])
            loss = contrastive_loss(image_enc(x), spot_enc(s), loss_cfg)
            losses.append(float(loss))
    if not losses:
        raise TooFewPairs("need at least 2 pairs to evaluate a contrastive loss")
    return float(np.mean(losses))


def train(
    config: TrainConfig,
    pairs: list[PatchSpotPair],
    instrumentation: TrainInstrumentation | None = None,
) -> Checkpoint:
    """Run the full training loop and return the lowest-test-loss checkpoint."""
    d = _check_pairs(pairs)
    train_pairs, test_pairs = split_dataset(pairs, config.split_fraction, config.seed)
    if not train_pairs or not test_pairs:
        raise TooFewPairs("split produced an empty train or test side")
    if config.batch_size > len(train_pairs):
        raise TooFewPairs(
            f"batch_size {config.batch_size} exceeds train split size {len(train_pairs)}"
        )
    if instrumentation is not None:
        instrumentation.test_keys = {p.key for p in test_pairs}

    torch.manual_seed(config.seed)
    image_enc = ImageEncoder(
        d_o=config.d_o,
        backbone=config.backbone,
        feature_dim=config.feature_dim,
        dropout=config.dropout,
        weights_path=config.backbone_weights,
    )
    spot_enc = SpotEncoder(d=d, d_o=config.d_o, dropout=config.dropout)
    optimizer = torch.optim.AdamW(
        list(image_enc.parameters()) + list(spot_enc.parameters()),
        lr=config.learning_rate,
        weight_decay=config.weight_decay,
    )

    best_loss = float("inf")
    best_params: dict[str, np.ndarray] | None = None
    best_epoch = 0
    history: list[dict] = []

    for epoch in range(1, config.epochs + 1):
        if config.augment:
            plan_rng = np.random.default_rng([config.seed, epoch, _AUGMENT_STREAM])
            plan = sample_transforms(plan_rng, len(train_pairs))
            if instrumentation is not None:
                instrumentation.augment_draws += plan.size
        else:
            plan = np.full((len(train_pairs), 1), IDENTITY)
        entries = [(i, int(op)) for i in range(len(train_pairs)) for op in plan[i]]
        shuffle_rng = np.random.default_rng([config.seed, epoch, _SHUFFLE_STREAM])
        order = shuffle_rng.permutation(len(entries))
        if instrumentation is not None:
            instrumentation.epoch_sizes.append(len(entries))

        image_enc.train()
        spot_enc.train()
        n_batches = len(entries) // config.batch_size  # incomplete trailing batch dropped
        for b in range(n_batches):
            batch_entries = [entries[j] for j in order[b * config.batch_size : (b + 1) * config.batch_size]]
            x, s = _batch_tensors(train_pairs, batch_entries)
            loss = contrastive_loss(image_enc(x), spot_enc(s), config.loss)
            if not bool(torch.isfinite(loss)):
                raise NonFiniteLoss(
                    f"non-finite loss at epoch {epoch}, batch {b}", epoch=epoch, batch_index=b
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            if instrumentation is not None:
                instrumentation.update_steps += 1
                instrumentation.trained_keys.update(train_pairs[i].key for i, _ in batch_entries)

        train_loss = _evaluate_split(image_enc, spot_enc, config.loss, train_pairs, config.batch_size)
        test_loss = _evaluate_split(image_enc, spot_enc, config.loss, test_pairs, config.batch_size)
        history.append({"epoch": epoch, "train_loss": train_loss, "test_loss": test_loss})
        if test_loss < best_loss:
            best_loss = test_loss
            best_epoch = epoch
            best_params = encoder_state_arrays(image_enc, spot_enc)

    assert best_params is not None
    echo = {
        "d": d,
        "d_o": config.d_o,
        "backbone": config.backbone,
        "feature_dim": config.feature_dim,
        "dropout": config.dropout,
        "temperature": config.loss.temperature,
        "loss_mode": config.loss.mode,
        "spot_term_weight": config.loss.spot_term_weight,
        "epochs": config.epochs,
        "batch_size": config.batch_size,
        "learning_rate": config.learning_rate,
        "weight_decay": config.weight_decay,
        "split_fraction": config.split_fraction,
        "seed": config.seed,
        "augment": config.augment,
    }
    return Checkpoint(
        params=best_params,
        config=echo,
        best_test_loss=best_loss,
        epoch_of_best=best_epoch,
        history=history,
    )


def evaluate_loss(checkpoint: Checkpoint, pairs: list[PatchSpotPair]) -> float:
    """Mean configured loss over eval-mode batches; pure and repeatable."""
    _check_pairs(pairs)
    image_enc, spot_enc = checkpoint.encoders()
    return _evaluate_split(
        image_enc, spot_enc, checkpoint.loss_config(), pairs, int(checkpoint.config["batch_size"])
    )


def save_checkpoint(checkpoint: Checkpoint, path: str | Path) -> None:
    """Single .npz holding canonical-named parameter arrays plus a JSON meta blob."""
    meta = {
        "config": checkpoint.config,
        "best_test_loss": checkpoint.best_test_loss,
        "epoch_of_best": checkpoint.epoch_of_best,
        "history": checkpoint.history,
    }
    blob = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    np.savez_compressed(Path(path), __meta__=blob, **checkpoint.params)


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise ParseError(f"checkpoint not found: {path}")
    with np.load(path) as data:
        if "__meta__" not in data:
            raise ParseError(f"{path}: missing checkpoint metadata")
        meta = json.loads(bytes(data["__meta__"]).decode())
        params = {k: data[k] for k in data.files if k != "__meta__"}
    checkpoint = Checkpoint(
        params=params,
        config=meta["config"],
        best_test_loss=meta["best_test_loss"],
        epoch_of_best=meta["epoch_of_best"],
        history=meta["history"],
    )
    checkpoint.encoders()  # validates names and every parameter shape
    return checkpoint


def save_losses_csv(checkpoint: Checkpoint, path: str | Path) -> None:
    lines = ["epoch,train_loss,test_loss"]
    for row in checkpoint.history:
        lines.append(f"{row['epoch']},{row['train_loss']:.17g},{row['test_loss']:.17g}")
    Path(path).write_text("\n".join(lines) + "\n")
