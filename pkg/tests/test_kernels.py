"""Compiled and fallback kernels agree, and both agree with dense algebra."""
import numpy as np
import pytest

from levattn import _backend
from levattn.sensitivities import SPAN_TOL


def _prefix_scores(K):
    out = []
    for j, row in enumerate(K):
        prefix = K[:j]
        G = prefix.T @ prefix
        if np.linalg.norm(row - G @ np.linalg.pinv(G) @ row) > 1e-6 * np.linalg.norm(row):
            out.append(1.0)
        else:
            out.append(min(1.0, float(row @ np.linalg.pinv(G) @ row)))
    return np.array(out)


class TestOnlineKernel:
    def test_scores_match_prefix_pinv(self, kernels, rng):
        K = rng.standard_normal((60, 5))
        scores, _ = kernels.online_scores(K, SPAN_TOL)
        np.testing.assert_allclose(scores, _prefix_scores(K), atol=1e-9)

    def test_rank_deficient_stream(self, kernels, rng):
        B = rng.standard_normal((3, 6))
        K = rng.standard_normal((40, 3)) @ B
        scores, buf = kernels.online_scores(K, SPAN_TOL)
        np.testing.assert_allclose(scores, _prefix_scores(K), atol=1e-8)
        np.testing.assert_allclose(kernels.unpack_gram(buf), K.T @ K, rtol=1e-12, atol=1e-10)
        pinv = kernels.unpack_pinv(buf)
        ref = np.linalg.pinv(K.T @ K)
        np.testing.assert_allclose(pinv, ref, atol=1e-8 * np.abs(ref).max())

    def test_zero_row_scores_zero(self, kernels):
        buf = kernels.new_online_buffer(3)
        assert kernels.online_step(buf, np.zeros(3), SPAN_TOL) == 0.0
        assert kernels.online_step(buf, np.array([1.0, 0, 0]), SPAN_TOL) == 1.0

    def test_hand_values(self, kernels):
        scores, _ = kernels.online_scores(np.array([[1.0, 0], [2, 0], [1, 0]]), SPAN_TOL)
        np.testing.assert_allclose(scores, [1.0, 1.0, 0.2], rtol=1e-14)

    def test_buffer_layout(self, kernels):
        buf = kernels.new_online_buffer(4)
        assert buf.shape == (4, 5)
        kernels.gram_update(buf, np.arange(1.0, 5.0))
        np.testing.assert_array_equal(kernels.unpack_gram(buf), np.outer(np.arange(1.0, 5.0), np.arange(1.0, 5.0)))


class TestKhatriRaoKernel:
    @pytest.mark.parametrize("h", [0, 1, 2, 3])
    def test_matches_kron(self, kernels, rng, h):
        K = rng.standard_normal((7, 3))
        out = kernels.khatri_rao_power(K, h)
        for i in range(7):
            ref = np.ones(1)
            for _ in range(h):
                ref = np.kron(ref, K[i])
            np.testing.assert_allclose(out[i], ref, rtol=1e-15)

    def test_powered_scores(self, kernels, rng):
        K = rng.standard_normal((9, 4))
        q = rng.standard_normal(4)
        np.testing.assert_allclose(kernels.powered_scores(K, q, 3.0), np.abs(K @ q) ** 3, rtol=1e-13)


@pytest.mark.skipif(_backend.compiled_kernels is None, reason="extension not built")
class TestParity:
    def test_online_scores(self, rng):
        K = rng.standard_normal((300, 12))
        K[100:] = K[100:, :] * 1e-3
        a, buf_a = _backend.compiled_kernels.online_scores(K, SPAN_TOL)
        b, buf_b = _backend.python_kernels.online_scores(K, SPAN_TOL)
        np.testing.assert_allclose(a, b, atol=1e-12)
        np.testing.assert_allclose(buf_a, buf_b, rtol=1e-9, atol=1e-12)

    def test_khatri_rao(self, rng):
        K = rng.standard_normal((50, 4))
        np.testing.assert_array_equal(
            _backend.compiled_kernels.khatri_rao_power(K, 3), _backend.python_kernels.khatri_rao_power(K, 3)
        )


def test_backend_name():
    assert _backend.BACKEND in ("cython", "python")
