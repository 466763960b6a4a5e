import numpy as np
import pytest

from levattn.streaming import StreamLengthError, StreamState, one_pass_universal_set, two_pass_universal_set
from levattn.universal_set import build_universal_set


class ReplayStream:
    """Replayable stream that can be told to lie on the second pass."""

    def __init__(self, rows, second_len=None):
        self.rows = rows
        self.second_len = second_len
        self.passes = 0

    def __iter__(self):
        self.passes += 1
        rows = self.rows if self.passes == 1 or self.second_len is None else self.rows[: self.second_len]
        return iter(rows)


class TestTwoPass:
    def test_identity(self):
        assert two_pass_universal_set(np.eye(3), 0.5).as_set() == {0, 1, 2}

    def test_empty(self):
        assert len(two_pass_universal_set([], 0.5)) == 0

    def test_matches_batch(self, rng):
        K = rng.standard_normal((500, 8))
        assert two_pass_universal_set(K, 0.02).as_set() == build_universal_set(K, 0.02).as_set()

    def test_length_mismatch(self, rng):
        K = list(rng.standard_normal((20, 3)))
        with pytest.raises(StreamLengthError):
            two_pass_universal_set(ReplayStream(K, 15), 0.1)

    def test_two_passes_taken(self, rng):
        s = ReplayStream(list(rng.standard_normal((10, 2))))
        two_pass_universal_set(s, 0.1)
        assert s.passes == 2


class TestOnePass:
    def test_identity_candidates(self):
        U, rep = one_pass_universal_set(np.eye(4), 1.0, report=True)
        assert U.as_set() == {0, 1, 2, 3}
        assert rep.candidates == 4

    def test_generator_single_pass(self, rng):
        K = rng.standard_normal((300, 5))
        gen = (row for row in K)
        assert one_pass_universal_set(gen, 0.03).as_set() == two_pass_universal_set(K, 0.03).as_set()

    def test_repeated_row(self):
        v = np.array([1.0, -2.0, 0.5])
        U, rep = one_pass_universal_set(np.tile(v, (200, 1)), 0.01, report=True)
        assert len(U) == 0
        # copy j (1-based) scores 1/(j-1) for j >= 2, and 1 for j = 1
        assert rep.candidates == 1 + 100

    def test_memory_bound(self, rng):
        K = rng.standard_normal((400, 6))
        _, rep = one_pass_universal_set(K, 0.05, report=True)
        assert rep.peak_words <= rep.bound(64)
        assert rep.peak_words >= 6 * 6

    def test_state_push_returns_score(self):
        st = StreamState(2, 0.5)
        assert st.push([1.0, 0.0]) == 1.0
        assert st.push([1.0, 0.0]) == pytest.approx(1.0)
        assert st.push([1.0, 0.0]) == pytest.approx(0.5)


@pytest.mark.parametrize("order", ["sorted_up", "sorted_down", "reversed"])
def test_adversarial_orders(rng, order):
    K = rng.standard_normal((250, 4)) * rng.exponential(1.0, (250, 1))
    norms = np.linalg.norm(K, axis=1)
    perm = {
        "sorted_up": np.argsort(norms),
        "sorted_down": np.argsort(-norms),
        "reversed": np.arange(250)[::-1],
    }[order]
    Kp = K[perm]
    a = one_pass_universal_set(Kp, 0.02).as_set()
    assert a == two_pass_universal_set(Kp, 0.02).as_set() == build_universal_set(Kp, 0.02).as_set()
