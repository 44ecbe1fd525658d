"""Three-stream person embedding model.

Stream 1 is the backbone plus generalized-mean pooling: a global descriptor.
Stream 2 localizes and re-encodes the head region, fusing it with the global
descriptor through learned per-sample weights. Stream 3 decomposes the
feature map into one attention map per attribute so pairwise distances can
be attributed to individual attributes. Streams 2 and 3 are independently
optional; the model only owns the parameters of enabled streams.
"""

from __future__ import annotations

import torch
from torch import nn

from .adh import ADHHead, attribute_features
from .backbone import BackboneConfig, GeMPool, build_backbone, normalize_rows
from .eva import EVAStream, fuse
from .schema import AttributeSchema
from .types import ConfigurationError


class ReIDModel(nn.Module):
    """Embedding model with optional head-attention and attribute streams."""

    def __init__(
        self,
        schema: AttributeSchema,
        num_classes: int,
        *,
        backbone: str = "transformer",
        channels: int = 256,
        input_size: tuple[int, int] = (256, 128),
        patch_size: int = 16,
        depth: int = 2,
        heads: int = 4,
        eva: bool = True,
        ep: bool = True,
        reduction: int = 16,
        localizer_hidden: int = 32,
    ):
        super().__init__()
        if num_classes < 1:
            raise ConfigurationError(f"num_classes must be >= 1, got {num_classes}")
        config = BackboneConfig(
            kind=backbone,
            input_size=tuple(input_size),
            embed_channels=channels,
            patch_size=patch_size,
            depth=depth,
            heads=heads,
        )
        self.backbone = build_backbone(config)
        self.pool = GeMPool()
        self.classifier = nn.Linear(channels, num_classes)
        self.input_size = tuple(input_size)
        self.channels = channels
        self.grid = config.output_grid

        if eva:
            grid_h, grid_w = self.grid
            head_grid = (max(3, grid_h // 2), grid_w)
            self.eva = EVAStream(
                channels,
                head_grid=head_grid,
                reduction=reduction,
                localizer_hidden=localizer_hidden,
            )
        else:
            self.eva = None
        if ep:
            self.adh = ADHHead(channels, schema.total_bits)
            self.attr_pool = GeMPool()
        else:
            self.adh = None

        self.attribute_names = tuple(schema.bit_name(b) for b in range(schema.total_bits))
        self.register_buffer("trained_steps", torch.zeros((), dtype=torch.long))

    @property
    def embedding_dim(self) -> int:
        # the head stream contributes one descriptor per strip
        return 4 * self.channels if self.eva is not None else self.channels

    def forward_features(self, images: torch.Tensor) -> dict[str, torch.Tensor]:
        """Run all enabled streams; every downstream consumer reads this dict."""
        feature_map = self.backbone(images)
        global_feat = self.pool(feature_map)
        out: dict[str, torch.Tensor] = {
            "feature_map": feature_map,
            "f_t": normalize_rows(global_feat),
            "logits": self.classifier(global_feat),
        }
        if self.eva is not None:
            head = self.eva(feature_map)
            out["f_h"] = head["f_h"]
            out["f_e"] = head["f_e"]
            out["params"] = head["params"]
            out["f"] = fuse(out["f_t"], normalize_rows(head["f_h"]), head["f_e"])
        else:
            out["f"] = out["f_t"]
        if self.adh is not None:
            attention = self.adh(feature_map)
            out["attention"] = attention
            out["attr_feats"] = attribute_features(feature_map, attention, p=self.attr_pool)
        return out

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        return self.forward_features(images)["f"]

    @torch.no_grad()
    def embed(self, images: torch.Tensor) -> torch.Tensor:
        """Final retrieval embedding, no gradients."""
        return self.forward_features(images)["f"]


def build_model(cfg, schema: AttributeSchema, num_classes: int) -> ReIDModel:
    """Construct a model from a RunConfig's model and data sections."""
    m = cfg.model
    return ReIDModel(
        schema,
        num_classes=num_classes,
        backbone=m.backbone,
        channels=m.channels,
        input_size=cfg.data.image_size,
        patch_size=m.patch_size,
        depth=m.depth,
        heads=m.heads,
        eva=m.eva,
        ep=m.ep,
        reduction=m.reduction,
        localizer_hidden=m.localizer_hidden,
    )
