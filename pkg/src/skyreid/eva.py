"""Elevated-view attention stream.

Aerial viewpoints compress the body but keep the head region comparatively
stable, so this stream learns an affine crop onto the upper body, splits the
cropped map into three horizontal strips, gates each strip channel-wise,
aggregates a head descriptor through a spatial softmax, and adaptively fuses
it with the global stream's embedding.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from .backbone import normalize_rows

# identity width, top-third height, centered horizontally, shifted to the top
DEFAULT_PRIOR = (1.0, 0.33, 0.0, -0.67)

MIN_SCALE = 0.05


class HeadLocalizer(nn.Module):
    """Predicts per-sample affine crop parameters [s_x, s_y, t_x, t_y].

    The regressor's final layer starts at zero, so a fresh localizer emits
    exactly the prior window; training moves it from there. Scales clamp to
    [MIN_SCALE, 1] and translations to the range keeping the window inside
    the source.
    """

    def __init__(self, channels: int, hidden: int = 32, prior: tuple = DEFAULT_PRIOR):
        super().__init__()
        if len(prior) != 4:
            raise ValueError("prior must be (s_x, s_y, t_x, t_y)")
        self.net = nn.Sequential(nn.Linear(channels, hidden), nn.ReLU(), nn.Linear(hidden, 4))
        nn.init.zeros_(self.net[-1].weight)
        nn.init.zeros_(self.net[-1].bias)
        self.register_buffer("prior", torch.tensor(prior, dtype=torch.float32))

    def forward(self, feature_map: torch.Tensor) -> torch.Tensor:
        pooled = feature_map.mean(dim=(-2, -1))
        raw = self.prior.to(pooled.dtype) + self.net(pooled)
        s = raw[:, :2].clamp(MIN_SCALE, 1.0)
        t_limit = 1.0 - s
        t = torch.clamp(raw[:, 2:], min=-t_limit, max=t_limit)
        return torch.cat([s, t], dim=1)


def sample_region(
    source: torch.Tensor, params: torch.Tensor, out_shape: tuple[int, int]
) -> torch.Tensor:
    """Bilinearly resample an affine window of ``source`` to ``out_shape``.

    ``params`` rows are [s_x, s_y, t_x, t_y] in normalized [-1, 1]
    coordinates; output pixel centers map through (s * coord + t).
    Differentiable in both the source and the parameters.
    """
    if source.ndim != 4:
        raise ValueError(f"source must be BxCxHxW, got shape {tuple(source.shape)}")
    if params.ndim != 2 or params.shape != (source.shape[0], 4):
        raise ValueError(f"params must be Bx4 matching the batch, got {tuple(params.shape)}")
    s_x, s_y, t_x, t_y = params.unbind(dim=1)
    zero = torch.zeros_like(s_x)
    theta = torch.stack(
        [torch.stack([s_x, zero, t_x], dim=1), torch.stack([zero, s_y, t_y], dim=1)], dim=1
    )
    out_h, out_w = out_shape
    grid = F.affine_grid(
        theta, (source.shape[0], source.shape[1], out_h, out_w), align_corners=False
    )
    return F.grid_sample(
        source, grid.to(source.dtype), mode="bilinear", padding_mode="border", align_corners=False
    )


def split_strips(feature_map: torch.Tensor) -> list[torch.Tensor]:
    """Split a map into three equal-height horizontal strips.

    Heights not divisible by three are padded by replicating the last row,
    which avoids injecting zeros at the lower strip border.
    """
    h = feature_map.shape[2]
    if h < 3:
        raise ValueError(f"need at least 3 rows to form strips, got {h}")
    pad = (-h) % 3
    if pad:
        feature_map = F.pad(feature_map, (0, 0, 0, pad), mode="replicate")
    return list(torch.chunk(feature_map, 3, dim=2))


class PartitionAttention(nn.Module):
    """Per-strip channel gating: each strip gets its own squeeze-excite pair.

    d_i = sigmoid(U_i relu(W_i GAP(X_i))) lies in (0, 1) per channel, and the
    strip is re-emphasized as A_i = X_i + X_i * d_i, so magnitudes stay
    within [|X_i|, 2|X_i|] and signs are preserved.
    """

    def __init__(self, channels: int, reduction: int = 16):
        super().__init__()
        hidden = max(1, channels // reduction)
        self.gates = nn.ModuleList(
            nn.Sequential(nn.Linear(channels, hidden), nn.ReLU(), nn.Linear(hidden, channels))
            for _ in range(3)
        )

    def forward(self, head_map: torch.Tensor) -> list[torch.Tensor]:
        strips = split_strips(head_map)
        out = []
        for strip, gate in zip(strips, self.gates):
            d = torch.sigmoid(gate(strip.mean(dim=(-2, -1))))
            out.append(strip + strip * d[:, :, None, None])
        return out


class HeadAggregator(nn.Module):
    """Collapses the three gated strips into the head descriptor f_h.

    Each strip's channel-sum map is normalized by a spatial softmax and used
    to weight the strip's locations; the three length-C results concatenate
    to f_h (length 3C). A linear layer maps f_h to the two fusion logits f_e.
    """

    def __init__(self, channels: int):
        super().__init__()
        self.channels = channels
        self.to_logits = nn.Linear(3 * channels, 2)

    def forward(self, strips: list[torch.Tensor]) -> tuple[torch.Tensor, torch.Tensor]:
        if len(strips) != 3:
            raise ValueError(f"expected 3 strips, got {len(strips)}")
        parts = []
        for strip in strips:
            b, c, h, w = strip.shape
            salience = strip.sum(dim=1).reshape(b, h * w)
            xi = torch.softmax(salience, dim=1)
            parts.append((strip.reshape(b, c, h * w) * xi[:, None, :]).sum(dim=-1))
        f_h = torch.cat(parts, dim=1)
        return f_h, self.to_logits(f_h)


def fusion_weights(f_e: torch.Tensor) -> torch.Tensor:
    """Softmax of the two fusion logits: non-negative, summing to one."""
    if f_e.ndim != 2 or f_e.shape[1] != 2:
        raise ValueError(f"fusion logits must be Bx2, got {tuple(f_e.shape)}")
    return torch.softmax(f_e, dim=1)


def fuse(f_t: torch.Tensor, f_h: torch.Tensor, f_e: torch.Tensor) -> torch.Tensor:
    """Adaptive fusion: concatenate the weighted streams, then L2-normalize.

    f = (f_t * w_1) joined with (f_h * w_2), with [w_1, w_2] = softmax(f_e)
    per sample.
    """
    if f_t.ndim != 2 or f_h.ndim != 2:
        raise ValueError("stream embeddings must be BxD matrices")
    if not f_t.shape[0] == f_h.shape[0] == f_e.shape[0]:
        raise ValueError(
            f"batch sizes differ: f_t {f_t.shape[0]}, f_h {f_h.shape[0]}, f_e {f_e.shape[0]}"
        )
    w = fusion_weights(f_e)
    raw = torch.cat([f_t * w[:, 0:1], f_h * w[:, 1:2]], dim=1)
    return normalize_rows(raw)


class EVAStream(nn.Module):
    """Localize the head window, gate its strips, aggregate the descriptor."""

    def __init__(
        self,
        channels: int,
        head_grid: tuple[int, int],
        reduction: int = 16,
        localizer_hidden: int = 32,
        prior: tuple = DEFAULT_PRIOR,
    ):
        super().__init__()
        if head_grid[0] < 3:
            raise ValueError("head grid must be at least 3 rows tall for strip attention")
        self.head_grid = tuple(head_grid)
        self.localizer = HeadLocalizer(channels, hidden=localizer_hidden, prior=prior)
        self.attention = PartitionAttention(channels, reduction=reduction)
        self.aggregator = HeadAggregator(channels)

    def forward(self, feature_map: torch.Tensor) -> dict[str, torch.Tensor]:
        params = self.localizer(feature_map)
        head_map = sample_region(feature_map, params, self.head_grid)
        f_h, f_e = self.aggregator(self.attention(head_map))
        return {"f_h": f_h, "f_e": f_e, "params": params, "head_map": head_map}
