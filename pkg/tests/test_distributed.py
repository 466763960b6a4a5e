import numpy as np
import pytest

from levattn.distributed import Shard, distributed_universal_set, expected_words, shard_matrix
from levattn.linalg import DimensionError
from levattn.universal_set import build_universal_set


class TestProtocol:
    def test_two_identity_shards(self):
        U, t = distributed_universal_set([Shard(0, np.eye(2)), Shard(1, np.eye(2))], 0.4)
        assert U.as_set() == {0, 1, 2, 3}
        assert t.total_words == expected_words(2, 2, [2, 2])

    def test_single_shard(self, rng):
        K = rng.standard_normal((200, 5))
        U, t = distributed_universal_set([Shard(0, K)], 0.03)
        assert U.as_set() == build_universal_set(K, 0.03).as_set()
        assert t.words_by_kind().get("gram", 0) == 0

    def test_uneven_shards(self, rng):
        K = rng.standard_normal((1000, 8))
        sizes = [1, 300, 0, 97, 250, 2, 350]
        U, t = distributed_universal_set(shard_matrix(K, sizes), 0.01)
        assert U.as_set() == build_universal_set(K, 0.01).as_set()
        counts = [sum(1 for j in U.indices if lo <= j < lo + s) for lo, s in zip(np.cumsum([0] + sizes), sizes)]
        assert t.total_words == expected_words(7, 8, counts)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            distributed_universal_set([Shard(0, np.eye(2)), Shard(1, np.eye(3))], 0.5)

    def test_bad_sizes(self):
        with pytest.raises(ValueError):
            shard_matrix(np.eye(3), [1, 1])

    def test_message_kinds(self):
        _, t = distributed_universal_set([Shard(i, np.eye(3)) for i in range(3)], 0.2)
        kinds = t.words_by_kind()
        assert kinds == {"gram": 2 * 9, "broadcast": 3 * 9, "candidates": 9 * 3}
