"""
Tests for the seeded batch loader
"""
import numpy as np
import pytest

from src.data.generator import generate_cases
from src.training.loader import BatchLoader


@pytest.fixture(scope="module")
def cases():
    return generate_cases(5, seed=0, size=8, raters=3)


def _signature(batches):
    return [(tuple(b.case_ids), tuple(b.raters), b.images.tobytes()) for b in batches]


class TestBatchLoader:
    """Ordering, rater picks and prefetching"""

    def test_batch_shapes(self, cases):
        batch = next(iter(BatchLoader(cases, 2, batch_size=2).batches(1)))
        assert batch.images.shape == (2, 1, 8, 8)
        assert batch.images.dtype == np.float32
        assert batch.targets.shape == (2, 2, 8, 8)
        np.testing.assert_array_equal(batch.targets.sum(axis=1), 1.0)

    def test_targets_match_picked_rater(self, cases):
        by_id = {c.case_id: c for c in cases}
        for batch in BatchLoader(cases, 2, batch_size=2, seed=1).batches(4):
            for k, (cid, r) in enumerate(zip(batch.case_ids, batch.raters)):
                np.testing.assert_array_equal(batch.targets[k].argmax(axis=0), by_id[cid].raters[r])

    def test_same_seed_same_batches(self, cases):
        a = _signature(BatchLoader(cases, 2, batch_size=2, seed=3).batches(6))
        b = _signature(BatchLoader(cases, 2, batch_size=2, seed=3).batches(6))
        c = _signature(BatchLoader(cases, 2, batch_size=2, seed=4).batches(6))
        assert a == b
        assert a != c

    def test_epoch_visits_every_case(self, cases):
        batches = list(BatchLoader(cases, 2, batch_size=1, seed=2).batches(5))
        assert sorted(cid for b in batches for cid in b.case_ids) == [c.case_id for c in cases]

    def test_partial_batch_spans_epochs(self, cases):
        batches = list(BatchLoader(cases, 2, batch_size=2, seed=0).batches(5))
        assert len(batches) == 5
        assert all(len(b.case_ids) == 2 for b in batches)

    def test_purpose_changes_order(self, cases):
        a = _signature(BatchLoader(cases, 2, batch_size=5, purpose="prior").batches(3))
        b = _signature(BatchLoader(cases, 2, batch_size=5, purpose="pgrd").batches(3))
        assert a != b

    def test_prefetch_keeps_sequence(self, cases):
        plain = _signature(BatchLoader(cases, 2, batch_size=2, seed=5).batches(7))
        prefetched = _signature(BatchLoader(cases, 2, batch_size=2, seed=5, prefetch=2).batches(7))
        assert plain == prefetched

    def test_prefetch_early_exit(self, cases):
        loader = BatchLoader(cases, 2, batch_size=2, prefetch=1)
        first = next(iter(loader.batches(100)))
        assert len(first.case_ids) == 2

    def test_invalid_arguments(self, cases):
        with pytest.raises(ValueError):
            BatchLoader([], 2)
        with pytest.raises(ValueError):
            BatchLoader(cases, 2, batch_size=0)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
