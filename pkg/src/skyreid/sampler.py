"""Identity-balanced mini-batch sampling for metric learning.

Each batch holds exactly P identities with K images apiece, which guarantees
every anchor in the batch has both positive and negative companions for
triplet mining. Identities with fewer than K images are topped up by sampling
with replacement.
"""

from __future__ import annotations

import math
from typing import Iterable, Iterator, Sequence

import numpy as np

from .types import ConfigurationError, ImageRecord


class PKSampler:
    """Deterministic P x K batch stream over one split's records.

    Every epoch visits each identity at least once: identities are shuffled
    and walked in chunks of P, and a final short chunk is topped up with
    identities drawn from outside it. The batch sequence is a pure function
    of (seed, epoch_index).
    """

    def __init__(self, records: Iterable[ImageRecord], p: int = 6, k: int = 4, seed: int = 0):
        if p < 2:
            raise ConfigurationError(f"need at least 2 identities per batch, got p={p}")
        if k < 1:
            raise ConfigurationError(f"need at least 1 image per identity, got k={k}")
        groups: dict[int, list[ImageRecord]] = {}
        for record in records:
            groups.setdefault(record.person_id, []).append(record)
        for pid in groups:
            groups[pid].sort(key=lambda r: r.key)
        if len(groups) < p:
            raise ConfigurationError(
                f"sampler needs at least p={p} identities, split has {len(groups)}"
            )
        self.groups = groups
        self.pids = np.array(sorted(groups), dtype=np.int64)
        self.p = p
        self.k = k
        self.seed = seed

    @property
    def batches_per_epoch(self) -> int:
        return math.ceil(len(self.pids) / self.p)

    def epoch(self, epoch_index: int = 0) -> Iterator[list[ImageRecord]]:
        """Yield this epoch's batches, each a list of exactly p * k records."""
        rng = np.random.default_rng((self.seed, epoch_index))
        order = self.pids[rng.permutation(len(self.pids))]
        for start in range(0, len(order), self.p):
            chunk = list(order[start : start + self.p])
            if len(chunk) < self.p:
                outside = np.setdiff1d(self.pids, chunk)
                extra = rng.choice(outside, size=self.p - len(chunk), replace=False)
                chunk.extend(int(pid) for pid in extra)
            batch: list[ImageRecord] = []
            for pid in chunk:
                pool = self.groups[int(pid)]
                replace = len(pool) < self.k
                picks = rng.choice(len(pool), size=self.k, replace=replace)
                batch.extend(pool[int(i)] for i in picks)
            yield batch
