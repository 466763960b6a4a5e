import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from levattn.linalg import (
    DimensionError,
    Factorization,
    GramState,
    gaussian_sketch,
    gram_accumulate,
    khatri_rao_row_power,
    khatri_rao_rows,
    pinv_quadratic_form,
)


class TestGramAccumulate:
    def test_single_outer_product(self):
        s = gram_accumulate(GramState(2), [1.0, 0.0])
        np.testing.assert_array_equal(s.gram, [[1, 0], [0, 0]])

    def test_identity_build_up(self):
        s = GramState(2)
        for row in ([1.0, 0.0], [0.0, 1.0]):
            s.accumulate(row)
        np.testing.assert_array_equal(s.gram, np.eye(2))

    def test_three_rows(self):
        s = GramState(2)
        for row in ([1, 0], [0, 1], [1, 1]):
            s.accumulate(row)
        np.testing.assert_array_equal(s.gram, [[2, 1], [1, 2]])
        assert s.count == 3

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            GramState(2).accumulate([1.0, 2.0, 3.0])


class TestPinvQuadraticForm:
    def test_identity(self):
        assert pinv_quadratic_form(Factorization.from_gram(np.eye(2)), [3, 4]) == pytest.approx(25, rel=1e-14)

    def test_two_by_two(self):
        f = Factorization.from_gram(np.array([[2.0, 1.0], [1.0, 2.0]]))
        assert pinv_quadratic_form(f, [1, 0]) == pytest.approx(2 / 3, rel=1e-14)

    def test_null_space(self):
        f = Factorization.from_gram(np.array([[1.0, 0.0], [0.0, 0.0]]))
        assert pinv_quadratic_form(f, [0, 1]) == 0.0
        assert f.rank == 1

    @pytest.mark.parametrize("method", ["svd", "qr"])
    def test_from_matrix_agrees_with_pinv(self, rng, method):
        K = rng.standard_normal((30, 5))
        f = Factorization.from_matrix(K, method)
        V = rng.standard_normal((8, 5))
        ref = np.einsum("ij,jk,ik->i", V, np.linalg.pinv(K.T @ K), V)
        np.testing.assert_allclose(f.quadratic_form(V), ref, rtol=1e-10)
        np.testing.assert_allclose(f.gram(), K.T @ K, rtol=1e-10, atol=1e-12)

    def test_norm_squared(self, rng):
        K = rng.standard_normal((20, 4))
        q = rng.standard_normal(4)
        f = Factorization.from_matrix(K)
        assert f.norm_squared(q) == pytest.approx(np.sum((K @ q) ** 2), rel=1e-12)


class TestKhatriRao:
    def test_outer_product(self):
        np.testing.assert_array_equal(khatri_rao_row_power([1, 2], 2), [1, 2, 2, 4])

    def test_inner_product_identity(self):
        a, b = khatri_rao_row_power([1, 2], 2), khatri_rao_row_power([1, 1], 2)
        assert a @ b == 9

    def test_basis_vector(self):
        out = khatri_rao_row_power([0, 0, 1], 3)
        assert out.shape == (27,)
        assert out[-1] == 1 and out.sum() == 1

    def test_cap(self):
        with pytest.raises(OverflowError):
            khatri_rao_row_power(np.ones(10), 3, cap=999)
        with pytest.raises(OverflowError):
            khatri_rao_rows(np.ones((2, 10)), 3, cap=999)

    @settings(max_examples=60, deadline=None)
    @given(
        arrays(np.float64, 4, elements=st.floats(-3, 3)),
        arrays(np.float64, 4, elements=st.floats(-3, 3)),
        st.integers(1, 3),
    )
    def test_identity_property(self, a, b, h):
        lhs = khatri_rao_row_power(a, h) @ khatri_rao_row_power(b, h)
        assert lhs == pytest.approx(float(a @ b) ** h, rel=1e-9, abs=1e-9)


class TestGaussianSketch:
    def test_deterministic(self):
        np.testing.assert_array_equal(gaussian_sketch(5, 40, seed=7), gaussian_sketch(5, 40, seed=7))

    def test_shape_and_scale(self):
        B = gaussian_sketch(400, 30, seed=1)
        assert B.shape == (30, 400)
        assert np.mean(np.sum(B**2, axis=1)) == pytest.approx(1.0, rel=0.05)

    def test_entry_mean(self):
        B = gaussian_sketch(1, 1000, seed=3)
        sigma = 1.0 / np.sqrt(1000)
        assert abs(B.mean()) <= 4 * sigma

    def test_jl_norms(self):
        n, m, gamma = 500, 64, 0.5
        B = gaussian_sketch(m, n, seed=11)
        X = np.random.default_rng(12).standard_normal((100, n))
        ratio = np.sum((X @ B) ** 2, axis=1) / np.sum(X**2, axis=1)
        assert np.mean(np.abs(ratio - 1) < gamma) >= 0.95
