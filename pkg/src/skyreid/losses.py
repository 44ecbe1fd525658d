"""Loss terms for the three-stream objective.

Five terms combine into the training objective: a metric distillation
residual tying the embedding distance to its per-attribute decomposition,
two attribute prior hinges steering how that decomposition splits between
differing and shared attributes, plus standard triplet and cross-entropy
identity losses.

All losses are differentiable torch expressions; plain floats and numpy
arrays are accepted and promoted. Pairs whose attribute vectors are
identical or fully disjoint carry no prior signal and contribute zero to
both prior losses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch


def _as_tensor(x, like: torch.Tensor | None = None) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    dtype = like.dtype if like is not None else torch.float64
    return torch.as_tensor(x, dtype=dtype)


@dataclass(frozen=True)
class LossWeights:
    """Coefficients of the composite objective.

    ``alpha`` weights the first prior term and the triplet term, ``beta``
    the second prior term and cross-entropy; the four ``w_*`` fields untie
    those pairs when set.
    """

    alpha: float = 10.0
    beta: float = 50.0
    margin: float = 0.3
    v: float = 0.5
    w_p1: float | None = None
    w_p2: float | None = None
    w_triplet: float | None = None
    w_ce: float | None = None

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")
        if not 0.0 < self.v <= 1.0:
            raise ValueError(f"v={self.v} outside (0, 1]")
        if self.margin <= 0:
            raise ValueError("margin must be positive")
        for name in ("w_p1", "w_p2", "w_triplet", "w_ce"):
            w = getattr(self, name)
            if w is not None and w < 0:
                raise ValueError(f"{name} must be non-negative")

    @property
    def p1_weight(self) -> float:
        return self.alpha if self.w_p1 is None else self.w_p1

    @property
    def p2_weight(self) -> float:
        return self.beta if self.w_p2 is None else self.w_p2

    @property
    def triplet_weight(self) -> float:
        return self.alpha if self.w_triplet is None else self.w_triplet

    @property
    def ce_weight(self) -> float:
        return self.beta if self.w_ce is None else self.w_ce


@dataclass(frozen=True, eq=False)
class PairAttributeContext:
    """Bitwise difference of one pair's attribute vectors.

    A set bit marks an attribute the two identities disagree on
    (an exclusive attribute); clear bits are shared.
    """

    xor: np.ndarray

    def __post_init__(self):
        xor = np.asarray(self.xor, dtype=np.uint8)
        if xor.ndim != 1 or xor.size == 0:
            raise ValueError(f"xor must be a non-empty vector, got shape {xor.shape}")
        if not np.isin(xor, (0, 1)).all():
            raise ValueError("xor vector must be binary")
        xor = np.ascontiguousarray(xor)
        xor.flags.writeable = False
        object.__setattr__(self, "xor", xor)

    @property
    def M(self) -> int:
        return int(self.xor.size)

    @property
    def M_E(self) -> int:
        return int(self.xor.sum())

    @property
    def is_degenerate(self) -> bool:
        return self.M_E in (0, self.M)


def attribute_xor(a_i, a_j) -> PairAttributeContext:
    """Exclusive-or of two equal-length binary attribute vectors."""
    bits_i = np.asarray(getattr(a_i, "bits", a_i), dtype=np.uint8)
    bits_j = np.asarray(getattr(a_j, "bits", a_j), dtype=np.uint8)
    if bits_i.shape != bits_j.shape:
        raise ValueError(f"attribute vectors differ in length: {bits_i.shape} vs {bits_j.shape}")
    return PairAttributeContext(xor=np.bitwise_xor(bits_i, bits_j))


def triplet_loss(d_ap, d_an, margin: float) -> torch.Tensor:
    """Hinge on the anchor-positive vs anchor-negative distance gap."""
    d_ap = _as_tensor(d_ap)
    d_an = _as_tensor(d_an, like=d_ap)
    return torch.clamp_min(margin + d_ap - d_an, 0.0)


def batch_hard_triplet(distances: torch.Tensor, labels: torch.Tensor, margin: float) -> torch.Tensor:
    """Mean triplet loss with hardest positive / hardest negative per anchor.

    ``distances`` is a square matrix over the batch; every anchor must have
    at least one same-label and one different-label partner.
    """
    dist = _as_tensor(distances)
    labels = torch.as_tensor(labels)
    n = dist.shape[0]
    if dist.shape != (n, n) or labels.shape != (n,):
        raise ValueError("distances must be NxN with N labels")
    same = labels.unsqueeze(0) == labels.unsqueeze(1)
    pos_mask = same & ~torch.eye(n, dtype=torch.bool)
    neg_mask = ~same
    if not pos_mask.any(dim=1).all():
        raise ValueError("every anchor needs at least one positive in the batch")
    if not neg_mask.any(dim=1).all():
        raise ValueError("every anchor needs at least one negative in the batch")
    d_ap = dist.masked_fill(~pos_mask, float("-inf")).max(dim=1).values
    d_an = dist.masked_fill(~neg_mask, float("inf")).min(dim=1).values
    return torch.clamp_min(margin + d_ap - d_an, 0.0).mean()


def cross_entropy_from_probs(
    probs: torch.Tensor, targets: torch.Tensor, smoothing: float = 0.0
) -> torch.Tensor:
    """Cross-entropy between predicted probability rows and one-hot targets.

    Smoothing mixes each target row toward uniform. Zero predicted
    probabilities are clamped at 1e-12 rather than faulting.
    """
    q = _as_tensor(probs)
    p = _as_tensor(targets, like=q)
    if q.shape != p.shape or q.ndim != 2:
        raise ValueError(f"probs and targets must share an NxC shape, got {q.shape} and {p.shape}")
    if not 0.0 <= smoothing < 1.0:
        raise ValueError(f"smoothing={smoothing} outside [0, 1)")
    if smoothing:
        p = (1.0 - smoothing) * p + smoothing / q.shape[1]
    return -(p * q.clamp_min(1e-12).log()).sum(dim=1).mean()


def cross_entropy_from_logits(
    logits: torch.Tensor, labels: torch.Tensor, smoothing: float = 0.0
) -> torch.Tensor:
    """Numerically stable cross-entropy on raw logits with integer labels."""
    logits = _as_tensor(logits)
    labels = torch.as_tensor(labels, dtype=torch.long)
    if logits.ndim != 2 or labels.shape != logits.shape[:1]:
        raise ValueError("logits must be NxC with N integer labels")
    if not 0.0 <= smoothing < 1.0:
        raise ValueError(f"smoothing={smoothing} outside [0, 1)")
    log_q = torch.log_softmax(logits, dim=1)
    n, c = logits.shape
    target = torch.zeros_like(log_q)
    target[torch.arange(n), labels] = 1.0
    if smoothing:
        target = (1.0 - smoothing) * target + smoothing / c
    return -(target * log_q).sum(dim=1).mean()


def metric_distillation_loss(total, per_attribute=None) -> torch.Tensor:
    """Absolute gap between a distance and the sum of its attribute parts.

    Accepts either (total, per_attribute) or a single decomposition object
    exposing ``total`` and ``per_attribute``.
    """
    if per_attribute is None:
        per_attribute = total.per_attribute
        total = total.total
    per = _as_tensor(per_attribute)
    total = _as_tensor(total, like=per)
    return (total - per.sum()).abs()


def lambda_balance(M: int, M_E: int, v: float) -> float:
    """Per-attribute threshold level for the second prior loss.

    Defined for pairs that share some attributes and differ on others;
    positive on that whole domain.
    """
    if not 0 < M_E < M:
        raise ValueError(f"lambda is undefined for M_E={M_E} of M={M}")
    if not 0.0 < v <= 1.0:
        raise ValueError(f"v={v} outside (0, 1]")
    tau = (M_E / M) ** v
    return 0.5 * math.log((M - M_E * tau) / (M_E * (1.0 - tau)))


def _shares(per_attribute: torch.Tensor, total) -> torch.Tensor:
    per = _as_tensor(per_attribute)
    if per.ndim != 1:
        raise ValueError(f"per-attribute distances must be a vector, got shape {tuple(per.shape)}")
    d_hat = per.sum() if total is None else _as_tensor(total, like=per)
    if float(d_hat.detach()) <= 0.0:
        raise ValueError("prior losses need a positive reconstructed distance")
    return per / d_hat


def prior_loss_p1(
    per_attribute: torch.Tensor, ctx: PairAttributeContext, v: float, total=None
) -> torch.Tensor:
    """Group-level prior: the differing attributes must carry at least a
    (M_E/M)^v share of the distance, the shared ones at most the rest.

    ``total`` overrides the normalizer (defaults to the attribute sum).
    Degenerate pairs contribute zero.
    """
    per = _as_tensor(per_attribute)
    if per.shape[0] != ctx.M:
        raise ValueError(f"{per.shape[0]} distances for {ctx.M} attributes")
    if ctx.is_degenerate:
        return torch.zeros((), dtype=per.dtype)
    shares = _shares(per, total)
    mask = torch.as_tensor(ctx.xor.copy(), dtype=torch.bool)
    tau = (ctx.M_E / ctx.M) ** v
    exclusive = shares[mask].sum()
    common = shares[~mask].sum()
    return torch.clamp_min(tau - exclusive, 0.0) + torch.clamp_min(common - (1.0 - tau), 0.0)


def prior_loss_p2(
    per_attribute: torch.Tensor, ctx: PairAttributeContext, v: float, total=None
) -> torch.Tensor:
    """Per-attribute prior: each differing attribute's share is hinged below
    by e^-lambda * (M_E/M)^v / M_E and each shared one above by
    e^lambda * (1-(M_E/M)^v) / (M-M_E).

    Degenerate pairs contribute zero.
    """
    per = _as_tensor(per_attribute)
    if per.shape[0] != ctx.M:
        raise ValueError(f"{per.shape[0]} distances for {ctx.M} attributes")
    if ctx.is_degenerate:
        return torch.zeros((), dtype=per.dtype)
    shares = _shares(per, total)
    mask = torch.as_tensor(ctx.xor.copy(), dtype=torch.bool)
    tau = (ctx.M_E / ctx.M) ** v
    lam = lambda_balance(ctx.M, ctx.M_E, v)
    lower = math.exp(-lam) * tau / ctx.M_E
    upper = math.exp(lam) * (1.0 - tau) / (ctx.M - ctx.M_E)
    excl_pen = torch.clamp_min(lower - shares[mask], 0.0).sum()
    comm_pen = torch.clamp_min(shares[~mask] - upper, 0.0).sum()
    return excl_pen + comm_pen


def pairwise_prior_losses(
    per_attribute: torch.Tensor, xor: torch.Tensor, v: float, eps: float = 1e-12
) -> tuple[torch.Tensor, torch.Tensor]:
    """Both prior losses averaged over a batch of pairs, vectorized.

    ``per_attribute`` is pairs x attributes, ``xor`` the matching binary
    difference rows. Degenerate rows (or rows with a non-positive distance
    sum) count as zero in the average.
    """
    per = _as_tensor(per_attribute)
    mask = torch.as_tensor(xor, device=per.device).bool()
    if per.shape != mask.shape or per.ndim != 2:
        raise ValueError("per_attribute and xor must share a pairs x attributes shape")
    n_pairs, M = per.shape

    d_hat = per.sum(dim=1)
    shares = per / d_hat.clamp_min(eps).unsqueeze(1)
    m_e = mask.sum(dim=1).to(per.dtype)
    live = (m_e > 0) & (m_e < M) & (d_hat > 0)

    # degenerate rows get harmless clamped counts, then are zeroed out
    m_e_safe = m_e.clamp(1.0, M - 1.0)
    tau = (m_e_safe / M) ** v
    lam = 0.5 * torch.log((M - m_e_safe * tau) / (m_e_safe * (1.0 - tau)))
    lower = torch.exp(-lam) * tau / m_e_safe
    upper = torch.exp(lam) * (1.0 - tau) / (M - m_e_safe)

    excl_share = (shares * mask).sum(dim=1)
    comm_share = (shares * ~mask).sum(dim=1)
    p1_rows = torch.clamp_min(tau - excl_share, 0.0) + torch.clamp_min(comm_share - (1.0 - tau), 0.0)

    excl_pen = (torch.clamp_min(lower.unsqueeze(1) - shares, 0.0) * mask).sum(dim=1)
    comm_pen = (torch.clamp_min(shares - upper.unsqueeze(1), 0.0) * ~mask).sum(dim=1)
    p2_rows = excl_pen + comm_pen

    zero = torch.zeros((), dtype=per.dtype, device=per.device)
    p1 = torch.where(live, p1_rows, zero).sum() / n_pairs
    p2 = torch.where(live, p2_rows, zero).sum() / n_pairs
    return p1, p2


def total_loss(distillation, p1, p2, triplet, ce, weights: LossWeights) -> torch.Tensor:
    """Weighted sum of the five terms. Faults on any non-finite component,
    naming it."""
    parts = {"distillation": distillation, "p1": p1, "p2": p2, "triplet": triplet, "ce": ce}
    for name, value in parts.items():
        scalar = float(value.detach()) if isinstance(value, torch.Tensor) else float(value)
        if not math.isfinite(scalar):
            raise ValueError(f"loss component {name!r} is non-finite: {scalar}")
    d = _as_tensor(distillation)
    return (
        d
        + weights.p1_weight * _as_tensor(p1, like=d)
        + weights.p2_weight * _as_tensor(p2, like=d)
        + weights.triplet_weight * _as_tensor(triplet, like=d)
        + weights.ce_weight * _as_tensor(ce, like=d)
    )
