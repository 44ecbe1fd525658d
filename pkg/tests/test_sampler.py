"""Tests for the P x K identity batch sampler."""

import pytest

from skyreid.sampler import PKSampler
from skyreid.types import CameraPlatform, ConfigurationError, ImageRecord


def make_records(counts: dict[int, int]) -> list[ImageRecord]:
    records = []
    for pid, n in counts.items():
        for seq in range(n):
            records.append(
                ImageRecord(person_id=pid, platform=CameraPlatform.AERIAL, sequence=seq)
            )
    return records


def batch_keys(batch):
    return [r.key for r in batch]


class TestBatchShape:
    def test_exact_p_times_k(self):
        records = make_records({pid: 3 for pid in range(12)})
        sampler = PKSampler(records, p=6, k=4, seed=0)
        for batch in sampler.epoch(0):
            assert len(batch) == 24
            per_pid = {}
            for r in batch:
                per_pid.setdefault(r.person_id, 0)
                per_pid[r.person_id] += 1
            assert len(per_pid) == 6  # exactly P distinct identities
            assert all(count == 4 for count in per_pid.values())

    def test_batches_per_epoch_covers_all(self):
        records = make_records({pid: 2 for pid in range(13)})
        sampler = PKSampler(records, p=6, k=4, seed=1)
        assert sampler.batches_per_epoch == 3  # ceil(13 / 6)
        seen = set()
        for batch in sampler.epoch(0):
            seen |= {r.person_id for r in batch}
        assert seen == set(range(13))

    def test_identity_with_one_image_repeats_it(self):
        records = make_records({1: 1, 2: 5, 3: 5, 4: 5})
        sampler = PKSampler(records, p=4, k=4, seed=0)
        batch = next(iter(sampler.epoch(0)))
        ones = [r for r in batch if r.person_id == 1]
        assert len(ones) == 4
        assert all(r.key == ones[0].key for r in ones)

    def test_rich_identity_sampled_without_replacement(self):
        records = make_records({1: 6, 2: 6, 3: 6, 4: 6})
        sampler = PKSampler(records, p=4, k=4, seed=3)
        for batch in sampler.epoch(0):
            for pid in (1, 2, 3, 4):
                keys = [r.key for r in batch if r.person_id == pid]
                assert len(set(keys)) == 4  # no repeats when enough images exist


class TestDeterminism:
    def test_same_seed_same_sequence(self):
        records = make_records({pid: 3 for pid in range(9)})
        a = [batch_keys(b) for b in PKSampler(records, p=4, k=2, seed=5).epoch(2)]
        b = [batch_keys(b) for b in PKSampler(records, p=4, k=2, seed=5).epoch(2)]
        assert a == b

    def test_different_epochs_differ(self):
        records = make_records({pid: 3 for pid in range(9)})
        sampler = PKSampler(records, p=4, k=2, seed=5)
        assert [batch_keys(b) for b in sampler.epoch(0)] != [
            batch_keys(b) for b in sampler.epoch(1)
        ]

    def test_different_seeds_differ(self):
        records = make_records({pid: 3 for pid in range(9)})
        a = [batch_keys(b) for b in PKSampler(records, p=4, k=2, seed=5).epoch(0)]
        b = [batch_keys(b) for b in PKSampler(records, p=4, k=2, seed=6).epoch(0)]
        assert a != b


class TestValidation:
    def test_too_few_identities_fatal(self):
        records = make_records({1: 4, 2: 4})
        with pytest.raises(ConfigurationError, match="identities"):
            PKSampler(records, p=6, k=4, seed=0)

    def test_bad_shape_parameters(self):
        records = make_records({pid: 2 for pid in range(8)})
        with pytest.raises(ConfigurationError):
            PKSampler(records, p=1, k=4, seed=0)
        with pytest.raises(ConfigurationError):
            PKSampler(records, p=4, k=0, seed=0)

    def test_no_records_fatal(self):
        with pytest.raises(ConfigurationError):
            PKSampler([], p=2, k=2, seed=0)
