"""Global appearance stream: backbone, generalized-mean pooling, distances.

Two interchangeable backbones produce C x h x w feature maps: a patch
transformer for full runs and a three-block strided conv net for desk-scale
runs. Maps pool to vectors through generalized-mean pooling and compare via
Euclidean distance on L2-normalized embeddings.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .types import ConfigurationError

BACKBONE_KINDS = ("transformer", "toyconv")

# three stride-2 blocks
_TOYCONV_STRIDE = 8


@dataclass(frozen=True)
class BackboneConfig:
    """Backbone selection plus the shape bookkeeping both kinds share."""

    kind: str
    input_size: tuple[int, int]
    embed_channels: int
    patch_size: int = 16
    depth: int = 2
    heads: int = 4

    def __post_init__(self):
        if self.kind not in BACKBONE_KINDS:
            raise ConfigurationError(f"unknown backbone kind {self.kind!r}; expected {BACKBONE_KINDS}")
        h, w = self.input_size
        if self.embed_channels % 8 != 0:
            raise ConfigurationError(
                f"embed_channels={self.embed_channels} must be divisible by 8 "
                "(the attribute head reduces channels by 8)"
            )
        if self.kind == "transformer":
            if self.patch_size < 1 or h % self.patch_size or w % self.patch_size:
                raise ConfigurationError(
                    f"input {h}x{w} is not divisible by patch size {self.patch_size}"
                )
            if self.embed_channels % self.heads != 0:
                raise ConfigurationError("embed_channels must be divisible by heads")
        else:
            if h % _TOYCONV_STRIDE or w % _TOYCONV_STRIDE:
                raise ConfigurationError(
                    f"input {h}x{w} is not divisible by the conv stride {_TOYCONV_STRIDE}"
                )

    @property
    def output_grid(self) -> tuple[int, int]:
        h, w = self.input_size
        s = self.patch_size if self.kind == "transformer" else _TOYCONV_STRIDE
        return h // s, w // s


def _check_input(x: torch.Tensor, cfg: BackboneConfig) -> None:
    h, w = cfg.input_size
    if x.ndim != 4 or x.shape[1] != 3 or x.shape[2] != h or x.shape[3] != w:
        raise ConfigurationError(
            f"expected a batch of 3x{h}x{w} images, got tensor of shape {tuple(x.shape)}"
        )


class TransformerPatchBackbone(nn.Module):
    """Patch embedding, learned positions, encoder stack, grid reshape."""

    def __init__(self, config: BackboneConfig):
        super().__init__()
        self.config = config
        c = config.embed_channels
        gh, gw = config.output_grid
        self.patch_embed = nn.Conv2d(3, c, kernel_size=config.patch_size, stride=config.patch_size)
        self.pos_embed = nn.Parameter(torch.empty(1, gh * gw, c))
        nn.init.trunc_normal_(self.pos_embed, std=0.02)
        layer = nn.TransformerEncoderLayer(
            d_model=c,
            nhead=config.heads,
            dim_feedforward=4 * c,
            dropout=0.0,
            activation="gelu",
            batch_first=True,
        )
        self.encoder = nn.TransformerEncoder(layer, num_layers=config.depth)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        _check_input(images, self.config)
        gh, gw = self.config.output_grid
        tokens = self.patch_embed(images).flatten(2).transpose(1, 2)
        tokens = self.encoder(tokens + self.pos_embed)
        return tokens.transpose(1, 2).reshape(images.shape[0], -1, gh, gw)


class ToyConvBackbone(nn.Module):
    """Three stride-2 conv blocks; cheap enough for CPU-minute training runs."""

    def __init__(self, config: BackboneConfig):
        super().__init__()
        self.config = config
        c = config.embed_channels
        widths = (3, c // 2, c, c)
        blocks = []
        for c_in, c_out in zip(widths, widths[1:]):
            blocks += [
                nn.Conv2d(c_in, c_out, kernel_size=3, stride=2, padding=1),
                nn.BatchNorm2d(c_out),
                nn.ReLU(inplace=True),
            ]
        self.blocks = nn.Sequential(*blocks)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        _check_input(images, self.config)
        return self.blocks(images)


def build_backbone(config: BackboneConfig) -> nn.Module:
    if config.kind == "transformer":
        return TransformerPatchBackbone(config)
    return ToyConvBackbone(config)


def gem_pool(feature_map: torch.Tensor, p: float, eps: float = 1e-6) -> torch.Tensor:
    """Generalized-mean pool over the trailing two (spatial) dimensions.

    Entries are floored at ``eps`` so the power mean stays defined on
    activations that dip negative. p=1 is the arithmetic mean; large p
    approaches the per-channel max.
    """
    p_val = float(p.detach() if isinstance(p, torch.Tensor) else p)
    if p_val <= 0.0:
        raise ValueError(f"GeM exponent must be positive, got {p_val}")
    x = torch.as_tensor(feature_map)
    return x.clamp_min(eps).pow(p).mean(dim=(-2, -1)).pow(1.0 / (p if isinstance(p, torch.Tensor) else p_val))


class GeMPool(nn.Module):
    """Generalized-mean pooling with a learnable exponent.

    The exponent is clamped to [1, 16] in the forward pass so optimizer
    steps cannot push the power mean out of its domain mid-training.
    """

    MIN_P = 1.0
    MAX_P = 16.0

    def __init__(self, init_p: float = 3.0, eps: float = 1e-6):
        super().__init__()
        self.p = nn.Parameter(torch.tensor(float(init_p)))
        self.eps = eps

    def forward(self, feature_map: torch.Tensor) -> torch.Tensor:
        return gem_pool(feature_map, self.p.clamp(self.MIN_P, self.MAX_P), eps=self.eps)


def normalize_rows(x: torch.Tensor, eps: float = 1e-12) -> torch.Tensor:
    """L2-normalize along the last dimension."""
    x = torch.as_tensor(x)
    return x / x.norm(dim=-1, keepdim=True).clamp_min(eps)


def pairwise_distance(f_i: torch.Tensor, f_j: torch.Tensor) -> torch.Tensor:
    """Euclidean distance between two embeddings after L2 normalization."""
    a = torch.as_tensor(f_i).ravel()
    b = torch.as_tensor(f_j).ravel()
    if a.shape != b.shape:
        raise ValueError(f"embedding dimensions differ: {a.shape[0]} vs {b.shape[0]}")
    return (normalize_rows(a) - normalize_rows(b)).norm()


def distance_matrix(feats_a: torch.Tensor, feats_b: torch.Tensor) -> torch.Tensor:
    """All-pairs normalized Euclidean distances between two embedding stacks.

    The direct (non-matmul) path keeps the matrix exactly symmetric and
    non-negative, which downstream ranking relies on.
    """
    a = torch.as_tensor(feats_a)
    b = torch.as_tensor(feats_b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError(f"expected NxD and MxD stacks, got {tuple(a.shape)} and {tuple(b.shape)}")
    return torch.cdist(
        normalize_rows(a), normalize_rows(b), compute_mode="donot_use_mm_for_euclid_dist"
    )
