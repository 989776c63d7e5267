import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from slipmil.core import (
    EmbeddingMatrix,
    WsiBag,
    cosine_matrix,
    l2_normalize_rows,
    softmax_rows,
)
from slipmil.errors import (
    DimensionMismatchError,
    NonPositiveTemperatureError,
    ZeroVectorError,
)

from conftest import unit_rows


class TestL2NormalizeRows:
    def test_three_four_five(self):
        m = l2_normalize_rows(EmbeddingMatrix([[3.0, 4.0]]))
        assert np.allclose(m.data, [[0.6, 0.8]], atol=0, rtol=0)

    def test_already_unit(self):
        m = l2_normalize_rows(EmbeddingMatrix([[1.0, 0.0, 0.0]]))
        assert np.array_equal(m.data, [[1.0, 0.0, 0.0]])

    def test_ones_row(self):
        # oracle: 1/sqrt(2) at 50 digits
        m = l2_normalize_rows(EmbeddingMatrix([[1.0, 1.0]]))
        expected = 0.7071067811865476
        assert np.allclose(m.data, [[expected, expected]], atol=1e-15)

    def test_zero_row_rejected(self):
        with pytest.raises(ZeroVectorError):
            l2_normalize_rows(EmbeddingMatrix([[1e-13, 0.0]]))

    def test_idempotent(self):
        rng = np.random.default_rng(0)
        m = EmbeddingMatrix(rng.standard_normal((5, 7)))
        once = l2_normalize_rows(m)
        twice = l2_normalize_rows(once)
        assert np.max(np.abs(once.data - twice.data)) < 1e-12

    def test_unit_norms(self):
        rng = np.random.default_rng(1)
        m = l2_normalize_rows(EmbeddingMatrix(rng.standard_normal((8, 4))))
        assert np.max(np.abs(np.linalg.norm(m.data, axis=1) - 1)) < 1e-9


class TestCosineMatrix:
    def test_orthonormal(self):
        a = EmbeddingMatrix(np.eye(2))
        b = EmbeddingMatrix([[1.0, 0.0]])
        assert np.array_equal(cosine_matrix(a, b), [[1.0], [0.0]])

    def test_self_similarity(self):
        v = EmbeddingMatrix([[0.6, 0.8]])
        assert cosine_matrix(v, v)[0, 0] == pytest.approx(1.0, abs=1e-15)

    def test_dot_product(self):
        a = EmbeddingMatrix([[0.6, 0.8]])
        b = EmbeddingMatrix([[0.8, 0.6]])
        assert cosine_matrix(a, b)[0, 0] == pytest.approx(0.96, abs=1e-15)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            cosine_matrix(EmbeddingMatrix([[1.0, 0.0]]),
                          EmbeddingMatrix([[1.0, 0.0, 0.0]]))

    def test_transpose_symmetry(self):
        rng = np.random.default_rng(2)
        a = EmbeddingMatrix(unit_rows(rng, 4, 6))
        b = EmbeddingMatrix(unit_rows(rng, 3, 6))
        assert np.max(np.abs(cosine_matrix(a, b) -
                             cosine_matrix(b, a).T)) < 1e-12

    def test_bounded(self):
        rng = np.random.default_rng(3)
        a = EmbeddingMatrix(unit_rows(rng, 5, 4))
        b = EmbeddingMatrix(unit_rows(rng, 5, 4))
        c = cosine_matrix(a, b)
        assert np.all(c >= -1 - 1e-9) and np.all(c <= 1 + 1e-9)


class TestSoftmaxRows:
    def test_symmetric_row(self):
        for tau in (0.01, 0.1, 1.0):
            sm = softmax_rows([[0.5, 0.5]], tau)
            assert np.array_equal(sm.data, [[0.5, 0.5]])

    def test_single_column(self):
        sm = softmax_rows([[3.7]], 0.01)
        assert sm.data[0, 0] == 1.0

    def test_sharp_temperature(self):
        # oracle: e^10 / (e^10 + 1) at 50 digits
        sm = softmax_rows([[0.9, 0.8]], 0.01)
        assert sm.data[0, 0] == pytest.approx(0.9999546021312976, abs=1e-15)
        assert sm.data[0, 1] == pytest.approx(4.5397868702434395e-05,
                                              rel=1e-12)

    def test_non_positive_temperature(self):
        with pytest.raises(NonPositiveTemperatureError):
            softmax_rows([[1.0, 2.0]], 0.0)
        with pytest.raises(NonPositiveTemperatureError):
            softmax_rows([[1.0, 2.0]], -0.5)

    @pytest.mark.parametrize("tau", [0.01, 0.1, 1.0])
    def test_row_stochastic_extreme_spread(self, tau):
        rng = np.random.default_rng(4)
        logits = rng.uniform(-1e4, 1e4, size=(20, 6))
        sm = softmax_rows(logits, tau)
        assert np.all(np.isfinite(sm.data))
        assert np.max(np.abs(sm.data.sum(axis=1) - 1)) < 1e-9

    @given(st.lists(st.floats(-50, 50), min_size=2, max_size=8),
           st.floats(0.01, 2.0),
           st.floats(-100, 100))
    @settings(max_examples=60, deadline=None)
    def test_shift_invariance(self, row, tau, shift):
        base = softmax_rows([row], tau).data
        shifted = softmax_rows([[x + shift for x in row]], tau).data
        assert np.max(np.abs(base - shifted)) < 1e-12

    @given(st.lists(st.lists(st.floats(-1e4, 1e4), min_size=3, max_size=3),
                    min_size=1, max_size=6))
    @settings(max_examples=60, deadline=None)
    def test_rows_always_sum_to_one(self, logits):
        sm = softmax_rows(logits, 0.1)
        assert np.all(np.isfinite(sm.data))
        assert np.max(np.abs(sm.data.sum(axis=1) - 1)) < 1e-9


class TestContainers:
    def test_embedding_matrix_rejects_nan(self):
        with pytest.raises(ValueError):
            EmbeddingMatrix([[np.nan, 1.0]])

    def test_embedding_matrix_rejects_empty(self):
        with pytest.raises(DimensionMismatchError):
            EmbeddingMatrix(np.zeros((0, 3)))

    def test_bag_coords_must_match(self):
        with pytest.raises(DimensionMismatchError):
            WsiBag(patches=EmbeddingMatrix([[1.0, 0.0]]), coords=(),
                   label=0, patient_id="p")

    def test_bag_rejects_negative_coords(self):
        with pytest.raises(ValueError):
            WsiBag(patches=EmbeddingMatrix([[1.0, 0.0]]),
                   coords=((-1, 0),), label=0, patient_id="p")
