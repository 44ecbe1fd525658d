"""Retrieval metrics: average precision, CMC curves and their aggregation.

All functions operate on numpy arrays. Ranking ties are broken by gallery
index (stable sort) so results are reproducible across runs.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

DEFAULT_RANKS = (1, 5, 10, 20)


def average_precision(relevance: np.ndarray) -> float:
    """AP of one ranked relevance vector (1 = correct identity at that rank).

    Averages precision-at-k over the ranks holding relevant items:
    AP = (1/R) * sum_k rel_k * (hits_at_k / k).
    """
    rel = np.asarray(relevance, dtype=bool)
    if rel.ndim != 1:
        raise ValueError(f"relevance must be a vector, got shape {rel.shape}")
    total = int(rel.sum())
    if total == 0:
        raise ValueError("average precision is undefined without relevant items")
    hits = np.cumsum(rel)
    ranks = np.arange(1, rel.size + 1)
    return float((hits[rel] / ranks[rel]).sum() / total)


def cmc_curve(relevance_rows: np.ndarray, ranks: Sequence[int] = DEFAULT_RANKS) -> dict[int, float]:
    """Rank-k match rates over a stack of ranked relevance rows.

    cmc[k] is the fraction of rows whose first relevant item lies within the
    top k. Every row must contain at least one relevant item.
    """
    rows = np.asarray(relevance_rows, dtype=bool)
    if rows.ndim != 2:
        raise ValueError(f"relevance_rows must be 2-D, got shape {rows.shape}")
    if not rows.any(axis=1).all():
        raise ValueError("every row must contain at least one relevant item")
    first_hit = rows.argmax(axis=1) + 1
    return {int(k): float((first_hit <= k).mean()) for k in ranks}


@dataclass(frozen=True)
class RetrievalScores:
    """Aggregated retrieval quality for one query set against one gallery."""

    mAP: float
    cmc: Mapping[int, float]
    evaluated_queries: int
    skipped_queries: int

    def to_dict(self) -> dict:
        return {
            "mAP": self.mAP,
            "cmc": {str(k): v for k, v in self.cmc.items()},
            "evaluated_queries": self.evaluated_queries,
            "skipped_queries": self.skipped_queries,
        }


def evaluate_retrieval(
    distances: np.ndarray,
    query_pids: np.ndarray,
    gallery_pids: np.ndarray,
    ranks: Sequence[int] = DEFAULT_RANKS,
) -> RetrievalScores:
    """Score a distance matrix: mAP plus CMC at the requested ranks.

    ``distances`` is queries x gallery; smaller means more similar. A gallery
    item is relevant to a query when the identities match. Queries with no
    relevant gallery item are excluded from both metrics with a warning.
    """
    dist = np.asarray(distances, dtype=np.float64)
    q_pids = np.asarray(query_pids)
    g_pids = np.asarray(gallery_pids)
    if dist.ndim != 2 or dist.shape != (q_pids.size, g_pids.size):
        raise ValueError(
            f"distance matrix shape {dist.shape} does not match "
            f"{q_pids.size} queries x {g_pids.size} gallery items"
        )

    aps: list[float] = []
    rel_rows: list[np.ndarray] = []
    skipped = 0
    for i in range(q_pids.size):
        order = np.argsort(dist[i], kind="stable")
        rel = g_pids[order] == q_pids[i]
        if not rel.any():
            skipped += 1
            continue
        aps.append(average_precision(rel))
        rel_rows.append(rel)

    if skipped:
        warnings.warn(
            f"{skipped} of {q_pids.size} queries have no gallery match and were excluded",
            UserWarning,
            stacklevel=2,
        )
    if not aps:
        raise ValueError("no query has a gallery match; nothing to evaluate")

    return RetrievalScores(
        mAP=float(np.mean(aps)),
        cmc=cmc_curve(np.stack(rel_rows), ranks=ranks),
        evaluated_queries=len(aps),
        skipped_queries=skipped,
    )
