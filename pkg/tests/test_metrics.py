"""Tests for retrieval metrics against brute-force oracles.

The oracles recompute average precision and CMC directly from their
definitions with plain Python loops, independent of the library code.
"""

import numpy as np
import pytest

from skyreid.metrics import RetrievalScores, average_precision, cmc_curve, evaluate_retrieval


def oracle_average_precision(relevance):
    """AP = mean over relevant ranks of (relevant seen so far / rank)."""
    hits = 0
    precisions = []
    for rank, rel in enumerate(relevance, start=1):
        if rel:
            hits += 1
            precisions.append(hits / rank)
    if not precisions:
        raise ValueError("no relevant items")
    return sum(precisions) / len(precisions)


def oracle_cmc(relevance_rows, k):
    """Fraction of queries whose first relevant item appears within rank k."""
    hit = 0
    for row in relevance_rows:
        if any(row[:k]):
            hit += 1
    return hit / len(relevance_rows)


class TestAveragePrecision:
    def test_hand_case(self):
        # relevant at ranks 1 and 3: (1/1 + 2/3) / 2 = 5/6
        assert average_precision(np.array([1, 0, 1])) == pytest.approx(5 / 6)

    def test_perfect_ranking(self):
        assert average_precision(np.array([1, 1, 1, 0, 0])) == pytest.approx(1.0)

    def test_single_relevant_at_bottom(self):
        assert average_precision(np.array([0, 0, 0, 1])) == pytest.approx(0.25)

    def test_matches_oracle_on_random_rankings(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            n = rng.integers(1, 40)
            rel = rng.random(n) < 0.3
            if not rel.any():
                rel[rng.integers(n)] = True
            assert average_precision(rel.astype(int)) == pytest.approx(
                oracle_average_precision(rel.tolist())
            )

    def test_no_relevant_raises(self):
        with pytest.raises(ValueError):
            average_precision(np.zeros(5, dtype=int))


class TestCmcCurve:
    def test_hand_case(self):
        rows = np.array([[1, 0, 0], [0, 0, 1], [0, 1, 0], [1, 0, 0]])
        curve = cmc_curve(rows, ranks=(1, 2, 3))
        assert curve[1] == pytest.approx(0.5)
        assert curve[2] == pytest.approx(0.75)
        assert curve[3] == pytest.approx(1.0)

    def test_matches_oracle(self):
        rng = np.random.default_rng(11)
        rows = (rng.random((30, 20)) < 0.15).astype(int)
        rows[:, -1] = 1
        curve = cmc_curve(rows, ranks=(1, 5, 10, 20))
        for k in (1, 5, 10, 20):
            assert curve[k] == pytest.approx(oracle_cmc(rows.tolist(), k))

    def test_monotone(self):
        rng = np.random.default_rng(3)
        rows = (rng.random((50, 25)) < 0.1).astype(int)
        rows[:, 0] |= rows.sum(axis=1) == 0
        curve = cmc_curve(rows, ranks=(1, 3, 5, 10, 25))
        vals = [curve[k] for k in sorted(curve)]
        assert all(b >= a for a, b in zip(vals, vals[1:]))


class TestEvaluateRetrieval:
    def test_tiny_hand_worked_case(self):
        # Two queries, three gallery items. Distances rank the gallery per row.
        dist = np.array(
            [
                [0.1, 0.5, 0.9],  # query pid 1: gallery order g0, g1, g2
                [0.7, 0.2, 0.4],  # query pid 2: gallery order g1, g2, g0
            ]
        )
        query_pids = np.array([1, 2])
        gallery_pids = np.array([1, 2, 1])
        # q0 relevance in ranked order: [1, 0, 1] -> AP 5/6, first hit rank 1
        # q1 relevance in ranked order: [1, 0, 0] -> AP 1, first hit rank 1
        scores = evaluate_retrieval(dist, query_pids, gallery_pids, ranks=(1, 2, 3))
        assert scores.mAP == pytest.approx((5 / 6 + 1.0) / 2)
        assert scores.cmc[1] == pytest.approx(1.0)
        assert scores.evaluated_queries == 2

    def test_ties_broken_by_gallery_order(self):
        # All distances equal: ranking must follow gallery index order.
        dist = np.zeros((1, 3))
        scores = evaluate_retrieval(
            dist, np.array([5]), np.array([9, 5, 9]), ranks=(1, 2)
        )
        # relevance in stable order: [0, 1, 0] -> AP = 1/2, cmc@1 = 0
        assert scores.mAP == pytest.approx(0.5)
        assert scores.cmc[1] == 0.0
        assert scores.cmc[2] == 1.0

    def test_queries_without_matches_are_excluded_with_warning(self):
        dist = np.array([[0.1, 0.2], [0.3, 0.1]])
        query_pids = np.array([1, 99])
        gallery_pids = np.array([1, 1])
        with pytest.warns(UserWarning, match="no gallery match"):
            scores = evaluate_retrieval(dist, query_pids, gallery_pids, ranks=(1,))
        assert scores.evaluated_queries == 1
        assert scores.skipped_queries == 1
        assert scores.mAP == pytest.approx(1.0)

    def test_all_queries_unmatched_raises(self):
        dist = np.ones((2, 2))
        with pytest.raises(ValueError):
            with pytest.warns(UserWarning):
                evaluate_retrieval(dist, np.array([1, 2]), np.array([3, 3]), ranks=(1,))

    def test_matches_bruteforce_on_random_problem(self):
        rng = np.random.default_rng(23)
        n_q, n_g = 25, 60
        query_pids = rng.integers(0, 8, size=n_q)
        gallery_pids = rng.integers(0, 8, size=n_g)
        dist = rng.random((n_q, n_g))
        scores = evaluate_retrieval(dist, query_pids, gallery_pids, ranks=(1, 5, 10))

        aps = []
        rows = []
        for i in range(n_q):
            order = np.argsort(dist[i], kind="stable")
            rel = (gallery_pids[order] == query_pids[i]).astype(int).tolist()
            if sum(rel) == 0:
                continue
            aps.append(oracle_average_precision(rel))
            rows.append(rel)
        assert scores.mAP == pytest.approx(sum(aps) / len(aps))
        for k in (1, 5, 10):
            assert scores.cmc[k] == pytest.approx(oracle_cmc(rows, k))

    def test_shape_validation(self):
        with pytest.raises(ValueError):
            evaluate_retrieval(np.ones((2, 3)), np.array([1, 2, 3]), np.array([1, 2, 3]))

    def test_scores_container(self):
        s = RetrievalScores(mAP=0.5, cmc={1: 0.4, 5: 0.6}, evaluated_queries=10, skipped_queries=0)
        d = s.to_dict()
        assert d["mAP"] == 0.5
        assert d["cmc"]["1"] == 0.4
