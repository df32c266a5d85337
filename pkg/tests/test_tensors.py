import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctxcomplete.tensors import (
    Rng,
    ShapeError,
    log_softmax,
    matmul,
    reshape3_to_mat,
    sigmoid,
    xavier_bound,
    xavier_uniform,
)


class TestMatmul:
    def test_product(self):
        a = np.arange(6.0).reshape(2, 3)
        b = np.arange(12.0).reshape(3, 4)
        assert np.array_equal(matmul(a, b), a @ b)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            matmul(np.zeros((2, 3)), np.zeros((2, 3)))

    def test_rejects_vectors(self):
        with pytest.raises(ShapeError):
            matmul(np.zeros(3), np.zeros((3, 2)))


class TestReshape3:
    def test_row_major_order(self):
        t = np.arange(24.0).reshape(2, 3, 4)
        m = reshape3_to_mat(t, 6, 4)
        assert np.array_equal(m.ravel(), t.ravel())

    def test_size_mismatch(self):
        with pytest.raises(ShapeError):
            reshape3_to_mat(np.zeros((2, 3, 4)), 5, 5)

    def test_rejects_matrices(self):
        with pytest.raises(ShapeError):
            reshape3_to_mat(np.zeros((2, 3)), 2, 3)


class TestRng:
    def test_same_seed_same_stream(self):
        a = Rng(7).normal(16)
        b = Rng(7).normal(16)
        assert np.array_equal(a, b)

    def test_different_seeds_differ(self):
        assert not np.array_equal(Rng(1).normal(16), Rng(2).normal(16))

    def test_state_roundtrip_resumes_stream(self):
        rng = Rng(3)
        rng.normal(5)
        state = rng.get_state()
        expect = rng.normal(8)
        other = Rng(0)
        other.set_state(state)
        assert np.array_equal(other.normal(8), expect)

    def test_choice_without_replacement_unique(self):
        idx = Rng(0).choice(20, size=20)
        assert sorted(idx.tolist()) == list(range(20))


class TestXavier:
    def test_bound_value(self):
        assert xavier_bound(3, 3) == pytest.approx(1.0)

    def test_draws_within_bound(self):
        s = xavier_bound(10, 20)
        w = xavier_uniform(Rng(0), 10, 20, (10, 20))
        assert np.all(np.abs(w) <= s)

    def test_scale_shrinks_bound(self):
        w = xavier_uniform(Rng(0), 10, 20, (10, 20), scale=0.5)
        assert np.all(np.abs(w) <= 0.5 * xavier_bound(10, 20))

    def test_rejects_bad_fans(self):
        with pytest.raises(ValueError):
            xavier_bound(0, 5)


class TestSigmoid:
    def test_midpoint(self):
        assert sigmoid(np.array([0.0]))[0] == pytest.approx(0.5)

    def test_extreme_inputs_do_not_overflow(self):
        out = sigmoid(np.array([-1e4, 1e4]))
        assert out[0] == 0.0 and out[1] == 1.0

    @settings(max_examples=50, deadline=None)
    @given(st.floats(min_value=-50, max_value=50))
    def test_symmetry(self, x):
        arr = np.array([x, -x])
        out = sigmoid(arr)
        assert out[0] + out[1] == pytest.approx(1.0, abs=1e-12)


class TestLogSoftmax:
    @settings(max_examples=50, deadline=None)
    @given(
        st.lists(st.floats(min_value=-30, max_value=30), min_size=2, max_size=8)
    )
    def test_normalizes(self, xs):
        lp = log_softmax(np.array(xs))
        assert np.sum(np.exp(lp)) == pytest.approx(1.0, abs=1e-9)

    def test_shift_invariance(self):
        x = np.array([0.1, -2.0, 3.5])
        assert np.allclose(log_softmax(x), log_softmax(x + 123.0), atol=1e-9)

    def test_large_logits_stable(self):
        lp = log_softmax(np.array([1e4, 0.0]))
        assert np.isfinite(lp[1]) or lp[1] == -np.inf
        assert lp[0] <= 0.0
