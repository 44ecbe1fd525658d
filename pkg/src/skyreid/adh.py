"""Attribute decomposition head.

A light convolutional head turns the backbone map into one strictly positive
attention map per attribute. Multiplying the backbone map by each attention
map and pooling yields attribute-guided feature vectors, whose pairwise
distances decompose the embedding distance into per-attribute contributions:
the raw material for "which attributes drove this match" reports.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .backbone import gem_pool, normalize_rows, pairwise_distance
from .types import ConfigurationError, DistanceDecomposition, ImageRecord


def delta_activation(x: torch.Tensor, K: float, T: float) -> torch.Tensor:
    """Soft positive activation: K*(x+1)^T for x > 0, K*e^x otherwise.

    Continuous at zero (both branches give K), strictly positive, monotone.
    Each branch is evaluated on clamped input so no NaN can leak through the
    inactive side's gradient.
    """
    if not 0.0 < K <= 1.0:
        raise ValueError(f"K={K} outside (0, 1]")
    if not 0.0 < T <= 1.0:
        raise ValueError(f"T={T} outside (0, 1]")
    x = torch.as_tensor(x)
    pos = K * (x.clamp_min(0.0) + 1.0) ** T
    neg = K * torch.exp(x.clamp_max(0.0))
    return torch.where(x > 0, pos, neg)


class ADHHead(nn.Module):
    """C -> C/8 (3x3) -> ReLU -> M (1x1) -> positive activation.

    Emits one strictly positive h x w attention map per attribute. The
    activation scale K defaults to 1/M so a zeroed head distributes weight
    uniformly across attributes.
    """

    def __init__(self, channels: int, n_attributes: int, K: float | None = None, T: float = 0.5):
        super().__init__()
        if channels % 8 != 0:
            raise ConfigurationError(f"channels={channels} must be divisible by 8")
        if n_attributes < 1:
            raise ConfigurationError("need at least one attribute")
        self.channels = channels
        self.n_attributes = n_attributes
        self.K = 1.0 / n_attributes if K is None else K
        self.T = T
        self.conv1 = nn.Conv2d(channels, channels // 8, kernel_size=3, padding=1)
        self.conv2 = nn.Conv2d(channels // 8, n_attributes, kernel_size=1)

    def forward(self, feature_map: torch.Tensor) -> torch.Tensor:
        if feature_map.ndim != 4 or feature_map.shape[1] != self.channels:
            raise ConfigurationError(
                f"expected Bx{self.channels}xHxW input, got {tuple(feature_map.shape)}"
            )
        return delta_activation(self.conv2(F.relu(self.conv1(feature_map))), self.K, self.T)


def attribute_features(feature_map: torch.Tensor, attention: torch.Tensor, p=3.0) -> torch.Tensor:
    """Pool the map re-weighted by each attention map: B x M x C vectors.

    ``p`` is a GeM exponent or a pooling callable (e.g. a learnable pooler).
    """
    if feature_map.shape[-2:] != attention.shape[-2:]:
        raise ValueError(
            f"spatial grids differ: map {tuple(feature_map.shape[-2:])} vs "
            f"attention {tuple(attention.shape[-2:])}"
        )
    if feature_map.shape[0] != attention.shape[0]:
        raise ValueError("batch sizes differ between map and attention")
    weighted = feature_map.unsqueeze(1) * attention.unsqueeze(2)
    return p(weighted) if callable(p) else gem_pool(weighted, p=p)


def attribute_distance(f_i: torch.Tensor, f_j: torch.Tensor) -> torch.Tensor:
    """Per-attribute distances between two M x C stacks.

    d^k is the squared Euclidean distance between the L2-normalized k-th
    vectors, scaled by 1/M so the full sum is commensurate with the
    embedding distance.
    """
    if f_i.shape != f_j.shape or f_i.ndim != 2:
        raise ValueError(f"expected matching MxC stacks, got {tuple(f_i.shape)} and {tuple(f_j.shape)}")
    m = f_i.shape[0]
    diff = normalize_rows(f_i) - normalize_rows(f_j)
    return (diff**2).sum(dim=-1) / m


def pairwise_attribute_distances(attr_feats: torch.Tensor) -> torch.Tensor:
    """All-pairs per-attribute distances for a batch: B x B x M.

    Uses the unit-vector identity ||a - b||^2 = 2 - 2 a.b; output is
    symmetric with zero diagonal.
    """
    if attr_feats.ndim != 3:
        raise ValueError(f"expected BxMxC stack, got shape {tuple(attr_feats.shape)}")
    m = attr_feats.shape[1]
    n = normalize_rows(attr_feats)
    gram = torch.einsum("imc,jmc->ijm", n, n)
    return ((2.0 - 2.0 * gram) / m).clamp_min(0.0)


def decompose_distance(f_i: torch.Tensor, f_j: torch.Tensor, total: float) -> DistanceDecomposition:
    """Split an embedding distance into per-attribute contributions."""
    per = attribute_distance(f_i, f_j).detach().to(torch.float64).numpy()
    return DistanceDecomposition.from_parts(float(total), per)


@dataclass(frozen=True)
class PairExplanation:
    """Everything needed to render a "why did these two match" report."""

    decomposition: DistanceDecomposition
    ranking: np.ndarray
    attribute_names: tuple[str, ...]
    saliency_i: np.ndarray
    saliency_j: np.ndarray
    image_i: np.ndarray
    image_j: np.ndarray
    trained: bool


def _records_to_batch(rec_i: ImageRecord, rec_j: ImageRecord) -> torch.Tensor:
    for rec in (rec_i, rec_j):
        if rec.pixel_data is None:
            raise ValueError(f"record {rec.key} has no pixel data to explain")
    stacked = np.stack([rec_i.pixel_data, rec_j.pixel_data]).astype(np.float32)
    return torch.from_numpy(stacked).permute(0, 3, 1, 2)


def explain_pair(
    model, rec_i: ImageRecord, rec_j: ImageRecord, attribute_names=None
) -> PairExplanation:
    """Rank the attributes by their contribution to one pair's distance.

    ``model`` must expose ``forward_features(images)`` returning the fused
    embedding, attribute feature stack and attention maps. An untrained
    model still produces a report, with a warning.
    """
    trained = int(getattr(model, "trained_steps", 0)) > 0
    if not trained:
        warnings.warn(
            "explaining with an untrained model; contributions reflect random weights",
            UserWarning,
            stacklevel=2,
        )
    images = _records_to_batch(rec_i, rec_j)
    with torch.no_grad():
        out = model.forward_features(images)
    total = float(pairwise_distance(out["f"][0], out["f"][1]))
    dec = decompose_distance(out["attr_feats"][0], out["attr_feats"][1], total)

    h, w = rec_i.pixel_data.shape[:2]
    saliency = (
        F.interpolate(out["attention"].float(), size=(h, w), mode="bilinear", align_corners=False)
        .numpy()
        .astype(np.float64)
    )
    m = dec.per_attribute.size
    if attribute_names is None:
        attribute_names = tuple(getattr(model, "attribute_names", None) or (f"attr_{k}" for k in range(m)))
    if len(attribute_names) != m:
        raise ValueError(f"{len(attribute_names)} names for {m} attributes")
    ranking = np.argsort(-dec.per_attribute, kind="stable")
    return PairExplanation(
        decomposition=dec,
        ranking=ranking,
        attribute_names=tuple(attribute_names),
        saliency_i=saliency[0],
        saliency_j=saliency[1],
        image_i=np.asarray(rec_i.pixel_data, dtype=np.float64),
        image_j=np.asarray(rec_j.pixel_data, dtype=np.float64),
        trained=trained,
    )


def write_explanation(expl: PairExplanation, out_dir, max_panels: int = 12) -> dict[str, str]:
    """Write a pair report: ranked text summary plus a saliency image grid.

    The text lists every attribute; the grid shows the originals and the
    ``max_panels`` highest-contribution saliency overlays.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    dec = expl.decomposition
    lines = [
        f"embedding distance: {dec.total:.6f}",
        f"reconstructed from attributes: {dec.reconstructed:.6f}",
        f"trained: {'yes' if expl.trained else 'NO (random weights)'}",
        "",
        "attribute contributions, largest first:",
    ]
    denom = max(dec.reconstructed, 1e-12)
    for rank, k in enumerate(expl.ranking, start=1):
        share = dec.per_attribute[k] / denom
        lines.append(
            f"{rank:3d}. {expl.attribute_names[k]:<40s} d={dec.per_attribute[k]:.6f} share={share:6.2%}"
        )
    summary_path = out_dir / "summary.txt"
    summary_path.write_text("\n".join(lines) + "\n")

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    top = expl.ranking[: min(max_panels, len(expl.ranking))]
    cols = 1 + len(top)
    fig, axes = plt.subplots(2, cols, figsize=(1.6 * cols, 3.6), squeeze=False)
    for row, (img, sal) in enumerate(((expl.image_i, expl.saliency_i), (expl.image_j, expl.saliency_j))):
        axes[row][0].imshow(np.clip(img, 0, 1))
        axes[row][0].set_title("input" if row == 0 else "", fontsize=7)
        for col, k in enumerate(top, start=1):
            axes[row][col].imshow(np.clip(img, 0, 1))
            axes[row][col].imshow(sal[k], cmap="inferno", alpha=0.55)
            if row == 0:
                axes[row][col].set_title(expl.attribute_names[k][:18], fontsize=6)
    for ax in axes.ravel():
        ax.axis("off")
    fig.tight_layout()
    saliency_path = out_dir / "saliency.png"
    fig.savefig(saliency_path, dpi=110)
    plt.close(fig)
    return {"summary": str(summary_path), "saliency": str(saliency_path)}
