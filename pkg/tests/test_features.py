import numpy as np
import pytest

from levattn.features import FeatureMap


class TestFeatureMap:
    def test_parse(self):
        assert FeatureMap.parse("identity").kind == "identity"
        fm = FeatureMap.parse("poly:3")
        assert fm.equivalent_p == 6 and fm.output_dim(4) == 64
        assert str(fm) == "poly:3"

    @pytest.mark.parametrize("text", ["poly", "poly:x", "poly:0", "rbf"])
    def test_parse_errors(self, text):
        with pytest.raises(ValueError):
            FeatureMap.parse(text)

    def test_polynomial_identity(self, rng):
        fm = FeatureMap.polynomial(2)
        K, Q = rng.standard_normal((6, 3)), rng.standard_normal((4, 3))
        np.testing.assert_allclose(fm.queries(Q) @ fm.keys(K).T, (Q @ K.T) ** 2, rtol=1e-12, atol=1e-13)

    def test_user_map(self, rng):
        fm = FeatureMap.user(lambda x: np.concatenate([x, x]))
        assert fm.equivalent_p is None
        assert fm.keys(rng.standard_normal((2, 3))).shape == (2, 6)
