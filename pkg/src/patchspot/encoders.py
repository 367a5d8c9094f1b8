"""Patch and spot encoders producing aligned d_o-dimensional embeddings.

Both encoders end in the same projection head:

    h1  = GELU(W1 z + b1)
    h2  = Dropout(W2 h1 + b2)
    out = LayerNorm(h1 + h2)

with exact (erf-based) GELU, dropout rate 0.1, and LayerNorm eps 1e-5.
The image side runs a convolutional backbone first (a compact 3-block
network by default, or a 50-layer residual network pooled to 2048
features); the spot side is a single affine layer. Embeddings are not
L2-normalized: retrieval and the losses use raw dot products.

NumPy in / NumPy out wrappers (``encode_images`` / ``encode_spots``)
handle layout conversion and eval/train mode; raw modules are used
directly by the training loop.
"""

from __future__ import annotations

import hashlib

import numpy as np
import torch
from torch import nn

from .errors import ParseError, ShapeMismatch

PATCH_SIZE = 256
RESIDUAL50_FEATURES = 2048
DEFAULT_COMPACT_FEATURES = 32
DROPOUT_RATE = 0.1
LAYERNORM_EPS = 1e-5


class ProjectionHead(nn.Module):
    def __init__(self, in_dim: int, out_dim: int, dropout: float = DROPOUT_RATE):
        super().__init__()
        self.fc1 = nn.Linear(in_dim, out_dim)
        self.fc2 = nn.Linear(out_dim, out_dim)
        self.act = nn.GELU()  # exact Gaussian CDF, not the tanh approximation
        self.dropout = nn.Dropout(dropout)
        self.norm = nn.LayerNorm(out_dim, eps=LAYERNORM_EPS)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        h1 = self.act(self.fc1(z))
        h2 = self.dropout(self.fc2(h1))
        return self.norm(h1 + h2)


class CompactBackbone(nn.Module):
    """Three stride-2 conv blocks with GELU and global average pooling.

    ``feature_dim`` sets the final channel count; earlier blocks use
    feature_dim/2 and feature_dim/4 channels (so it must be a multiple of 4).
    Deliberately unnormalized: per-sample mean shifts carry signal here and
    normalization layers would cancel them before pooling. Input size is
    free as long as three halvings stay above 1 pixel.
    """

    def __init__(self, feature_dim: int = DEFAULT_COMPACT_FEATURES):
        super().__init__()
        if feature_dim % 4 != 0:
            raise ShapeMismatch(f"compact feature_dim must be a multiple of 4, got {feature_dim}")
        channels = (feature_dim // 4, feature_dim // 2, feature_dim)
        blocks = []
        in_ch = 3
        for out_ch in channels:
            blocks += [nn.Conv2d(in_ch, out_ch, kernel_size=3, stride=2, padding=1), nn.GELU()]
            in_ch = out_ch
        self.blocks = nn.Sequential(*blocks)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.feature_dim = feature_dim

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.pool(self.blocks(x)).flatten(1)


class Residual50Backbone(nn.Module):
    """50-layer residual network, global-average-pooled to 2048 features.

    Weights are randomly initialized unless a state-dict file is supplied;
    fetching pretrained weights is out of scope here.
    """

    def __init__(self, weights_path: str | None = None):
        super().__init__()
        from torchvision.models import resnet50  # deferred: heavy import

        net = resnet50(weights=None)
        if weights_path is not None:
            state = torch.load(weights_path, map_location="cpu", weights_only=True)
            missing, unexpected = net.load_state_dict(state, strict=False)
            leftover = [k for k in missing if not k.startswith("fc.")]
            if leftover or unexpected:
                raise ParseError(
                    f"weights file {weights_path} does not match the backbone "
                    f"(missing {leftover[:3]}, unexpected {list(unexpected)[:3]})"
                )
        net.fc = nn.Identity()
        self.net = net
        self.feature_dim = RESIDUAL50_FEATURES

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


def make_backbone(kind: str, feature_dim: int, weights_path: str | None = None) -> nn.Module:
    if kind == "compact":
        return CompactBackbone(feature_dim)
    if kind == "residual50":
        return Residual50Backbone(weights_path)
    raise ShapeMismatch(f"unknown backbone kind {kind!r}")


class ImageEncoder(nn.Module):
    def __init__(
        self,
        d_o: int = 256,
        backbone: str = "compact",
        feature_dim: int = DEFAULT_COMPACT_FEATURES,
        dropout: float = DROPOUT_RATE,
        weights_path: str | None = None,
    ):
        super().__init__()
        self.backbone_kind = backbone
        self.backbone = make_backbone(backbone, feature_dim, weights_path)
        self.head = ProjectionHead(self.backbone.feature_dim, d_o, dropout)
        self.d_o = d_o

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.backbone(x))


class SpotEncoder(nn.Module):
    """One affine layer into d_o, then the shared projection head."""

    def __init__(self, d: int, d_o: int = 256, dropout: float = DROPOUT_RATE):
        super().__init__()
        self.linear = nn.Linear(d, d_o)
        self.head = ProjectionHead(d_o, d_o, dropout)
        self.d = d
        self.d_o = d_o

    def forward(self, s: torch.Tensor) -> torch.Tensor:
        return self.head(self.linear(s))


def patches_to_tensor(patches: np.ndarray, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Stack of H x W x 3 patches in [0, 1] -> N x 3 x H x W tensor."""
    patches = np.asarray(patches)
    if patches.ndim == 3:
        patches = patches[None]
    if patches.ndim != 4 or patches.shape[3] != 3:
        raise ShapeMismatch(f"expected N x H x W x 3 patches, got {patches.shape}")
    return torch.from_numpy(np.ascontiguousarray(patches)).permute(0, 3, 1, 2).to(dtype)


def _run(model: nn.Module, inputs: torch.Tensor, mode: str, seed: int | None) -> np.ndarray:
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if mode == "train":
        model.train()
        if seed is not None:
            torch.manual_seed(seed)
        return model(inputs).detach().numpy()
    model.eval()
    with torch.no_grad():
        return model(inputs).numpy()


def image_backbone(encoder: ImageEncoder, patches: np.ndarray) -> np.ndarray:
    """Pooled backbone features for a stack of patches (eval mode)."""
    encoder.eval()
    with torch.no_grad():
        return encoder.backbone(patches_to_tensor(patches)).numpy()


def encode_images(
    encoder: ImageEncoder, patches: np.ndarray, mode: str = "eval", seed: int | None = None
) -> np.ndarray:
    """Embed a stack of patches; dropout is active only in train mode."""
    return _run(encoder, patches_to_tensor(patches), mode, seed)


def encode_spots(
    encoder: SpotEncoder, expressions: np.ndarray, mode: str = "eval", seed: int | None = None
) -> np.ndarray:
    """Embed a stack of expression vectors; dropout is active only in train mode."""
    expressions = np.asarray(expressions, dtype=np.float32)
    if expressions.ndim == 1:
        expressions = expressions[None]
    if expressions.ndim != 2 or expressions.shape[1] != encoder.d:
        raise ShapeMismatch(
            f"expected N x {encoder.d} expression matrix, got {expressions.shape}"
        )
    return _run(encoder, torch.from_numpy(expressions), mode, seed)


# --- canonical parameter naming -------------------------------------------
#
# Checkpoints store flat numpy arrays under stable names:
#   image.head.W1 / b1 / W2 / b2 / ln_gain / ln_bias
#   spot.head.*   (same scheme), spot.linear.W / spot.linear.b
#   image.backbone.<torch parameter path>

_HEAD_RENAME = {
    "fc1.weight": "W1",
    "fc1.bias": "b1",
    "fc2.weight": "W2",
    "fc2.bias": "b2",
    "norm.weight": "ln_gain",
    "norm.bias": "ln_bias",
}
_HEAD_RENAME_INV = {v: k for k, v in _HEAD_RENAME.items()}


def _canonical_name(torch_name: str, side: str) -> str:
    if torch_name.startswith("head."):
        return f"{side}.head.{_HEAD_RENAME[torch_name[len('head.'):]]}"
    if torch_name == "linear.weight":
        return "spot.linear.W"
    if torch_name == "linear.bias":
        return "spot.linear.b"
    return f"{side}.{torch_name}"


def _torch_name(canonical: str) -> tuple[str, str]:
    side, rest = canonical.split(".", 1)
    if rest.startswith("head."):
        return side, "head." + _HEAD_RENAME_INV[rest[len("head."):]]
    if rest == "linear.W":
        return side, "linear.weight"
    if rest == "linear.b":
        return side, "linear.bias"
    return side, rest


def encoder_state_arrays(image_enc: ImageEncoder, spot_enc: SpotEncoder) -> dict[str, np.ndarray]:
    """All parameters and buffers as float32 arrays under canonical names."""
    out: dict[str, np.ndarray] = {}
    for side, module in (("image", image_enc), ("spot", spot_enc)):
        for name, tensor in module.state_dict().items():
            out[_canonical_name(name, side)] = tensor.detach().cpu().numpy().copy()
    return out


def load_state_arrays(
    image_enc: ImageEncoder, spot_enc: SpotEncoder, arrays: dict[str, np.ndarray]
) -> None:
    """Restore canonical-named arrays into the encoders, validating every shape."""
    states = {"image": image_enc.state_dict(), "spot": spot_enc.state_dict()}
    expected = {
        _canonical_name(n, side): (side, n) for side, sd in states.items() for n in sd
    }
    missing = sorted(set(expected) - set(arrays))
    extra = sorted(set(arrays) - set(expected))
    if missing or extra:
        raise ParseError(
            f"parameter names do not match encoders (missing {missing[:3]}, extra {extra[:3]})"
        )
    for canon, array in arrays.items():
        side, torch_name = expected[canon]
        current = states[side][torch_name]
        if tuple(current.shape) != tuple(array.shape):
            raise ShapeMismatch(
                f"{canon}: stored shape {tuple(array.shape)} != expected {tuple(current.shape)}"
            )
        states[side][torch_name] = torch.from_numpy(np.ascontiguousarray(array)).to(current.dtype)
    image_enc.load_state_dict(states["image"])
    spot_enc.load_state_dict(states["spot"])


def state_fingerprint(arrays: dict[str, np.ndarray]) -> str:
    """SHA-256 over parameter names and bytes in sorted order."""
    digest = hashlib.sha256()
    for name in sorted(arrays):
        digest.update(name.encode())
        digest.update(np.ascontiguousarray(arrays[name]).tobytes())
    return digest.hexdigest()
