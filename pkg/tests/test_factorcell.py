import numpy as np
import pytest

from ctxcomplete.factorcell import (
    CellState,
    ModelConfig,
    adapted_weights,
    batch_forward,
    batch_nll,
    compute_adaptation,
    forward,
    grad_check,
    init_params,
    initial_state,
    output_logprobs,
    project_context,
    sequence_nll,
    step,
)
from ctxcomplete.tensors import Rng, ShapeError


def adaptation_loops(c, Z_L, Z_R):
    """Index-by-index reference for the low-rank adaptation product."""
    m, n, r = Z_L.shape
    cols = Z_R.shape[1]
    A = np.zeros((n, cols))
    for j in range(n):
        for k in range(cols):
            for p in range(r):
                left = sum(c[i] * Z_L[i, j, p] for i in range(m))
                right = sum(Z_R[p, k, i] * c[i] for i in range(m))
                A[j, k] += left * right
    return A


class TestAdaptation:
    def test_matches_loop_reference(self):
        rng = Rng(0)
        for _ in range(5):
            Z_L = rng.normal((3, 4, 2))
            Z_R = rng.normal((2, 6, 3))
            c = rng.normal(3)
            got = compute_adaptation(c, Z_L, Z_R)
            assert np.max(np.abs(got - adaptation_loops(c, Z_L, Z_R))) < 1e-12

    def test_zero_context_disables_adaptation_exactly(self, tiny_model):
        params, _ = tiny_model
        cfg = params.cfg
        Wp = adapted_weights(np.zeros(cfg.m), params)
        assert np.array_equal(Wp, params.W)

    def test_rank_bounded_by_r(self, tiny_model):
        params, rng = tiny_model
        cfg = params.cfg
        A = compute_adaptation(rng.normal(cfg.m), params.Z_L, params.Z_R)
        assert np.linalg.matrix_rank(A) <= cfg.r

    def test_quadratic_in_context_scale(self, tiny_model):
        params, rng = tiny_model
        c = rng.normal(params.cfg.m)
        A1 = compute_adaptation(c, params.Z_L, params.Z_R)
        A2 = compute_adaptation(2.0 * c, params.Z_L, params.Z_R)
        assert np.allclose(A2, 4.0 * A1, atol=1e-12)

    def test_shape_validation(self, tiny_model):
        params, _ = tiny_model
        with pytest.raises(ShapeError):
            compute_adaptation(np.zeros(params.cfg.m + 1), params.Z_L, params.Z_R)
        with pytest.raises(ShapeError):
            compute_adaptation(np.zeros((2, params.cfg.m)), params.Z_L, params.Z_R)


class TestInit:
    def test_shapes_and_zero_biases(self, tiny_model):
        params, _ = tiny_model
        cfg = params.cfg
        n = cfg.e + cfg.h
        assert params.W.shape == (n, 3 * cfg.h)
        assert params.Z_L.shape == (cfg.m, n, cfg.r)
        assert params.Z_R.shape == (cfg.r, 3 * cfg.h, cfg.m)
        assert not params.b.any() and not params.out_b.any()

    def test_same_seed_same_params(self):
        cfg = ModelConfig(e=4, h=6, r=2, m=3, feat_dim=4, vocab_size=7, max_len=10)
        a = init_params(cfg, Rng(9))
        b = init_params(cfg, Rng(9))
        for name in a.FIELDS:
            assert np.array_equal(getattr(a, name), getattr(b, name))


class TestStep:
    def test_batch_forward_matches_step_loop(self, tiny_model):
        params, rng = tiny_model
        cfg = params.cfg
        seq = rng.integers(0, cfg.vocab_size, 6).astype(np.int64)
        c = rng.normal(cfg.m)
        cache = batch_forward(params, seq[None, :], C=c[None, :])

        Wp = adapted_weights(c, params)
        state = initial_state(cfg)
        for t, x in enumerate(seq):
            state = step(int(x), state, Wp, params)
            assert np.allclose(state.h, cache.H[t + 1, 0], atol=1e-12)
            assert np.allclose(
                output_logprobs(state.h, params), cache.logprobs[t, 0], atol=1e-12
            )

    def test_terminator_doubles_as_start_input(self, tiny_model):
        params, rng = tiny_model
        cfg = params.cfg
        eoq = cfg.vocab_size - 1
        seq = np.array([3, 4, eoq], dtype=np.int64)
        c = rng.normal(cfg.m)
        logprobs, cache = forward(seq, params, c=c)
        assert np.array_equal(cache.inputs[0], [eoq, 3, 4])
        # position t predicts seq[t]
        assert logprobs.shape == (3, cfg.vocab_size)

    def test_rejects_out_of_range_ids(self, tiny_model):
        params, _ = tiny_model
        Wp = params.W
        with pytest.raises(ValueError, match="outside vocabulary"):
            step(params.cfg.vocab_size, initial_state(params.cfg), Wp, params)

    def test_state_shapes(self, tiny_model):
        params, _ = tiny_model
        state = initial_state(params.cfg)
        assert isinstance(state, CellState)
        assert state.h.shape == (params.cfg.h,) and not state.h.any()


class TestForward:
    def test_rejects_empty_and_overlong(self, tiny_model):
        params, rng = tiny_model
        c = rng.normal(params.cfg.m)
        with pytest.raises(ValueError):
            forward(np.array([], dtype=np.int64), params, c=c)
        too_long = np.ones(params.cfg.max_len + 2, dtype=np.int64)
        with pytest.raises(ValueError, match="max_len"):
            forward(too_long, params, c=c)

    def test_context_exclusivity(self, tiny_model):
        params, rng = tiny_model
        cfg = params.cfg
        seq = np.array([[1, 2]], dtype=np.int64)
        with pytest.raises(ValueError):
            batch_forward(params, seq)
        with pytest.raises(ValueError):
            batch_forward(
                params, seq, C=np.zeros((1, cfg.m)), features=np.zeros((1, cfg.feat_dim))
            )

    def test_features_route_through_projection(self, tiny_model):
        params, rng = tiny_model
        cfg = params.cfg
        feats = rng.normal(cfg.feat_dim)
        seq = np.array([1, 2, 3], dtype=np.int64)
        via_features = sequence_nll(seq, params, features=feats)
        via_context = sequence_nll(seq, params, c=project_context(feats, params))
        assert via_features == pytest.approx(via_context, abs=1e-12)

    def test_logprobs_normalize(self, tiny_model):
        params, rng = tiny_model
        cache = batch_forward(
            params,
            np.array([[1, 2, 3]], dtype=np.int64),
            C=rng.normal((1, params.cfg.m)),
        )
        sums = np.sum(np.exp(cache.logprobs), axis=-1)
        assert np.allclose(sums, 1.0, atol=1e-9)

    def test_masked_positions_do_not_count(self, tiny_model):
        params, rng = tiny_model
        cfg = params.cfg
        inputs = rng.integers(0, cfg.vocab_size, (2, 4)).astype(np.int64)
        targets = rng.integers(0, cfg.vocab_size, (2, 4)).astype(np.int64)
        cache = batch_forward(params, inputs, C=rng.normal((2, cfg.m)))
        mask = np.ones((2, 4))
        full, n_full = batch_nll(cache, targets, mask)
        mask[1, 2:] = 0.0
        part, n_part = batch_nll(cache, targets, mask)
        assert n_full == 8.0 and n_part == 6.0
        manual = -float(
            cache.logprobs[2, 1, targets[1, 2]] + cache.logprobs[3, 1, targets[1, 3]]
        )
        assert part == pytest.approx(full - manual, abs=1e-9)


class TestGradCheck:
    def test_default_check_passes(self):
        report = grad_check()
        assert report.passed, report.errors

    @pytest.mark.parametrize("group", ["W", "Z_L", "Z_R", "proj_W", "embed", "out_W"])
    def test_detects_corrupted_gradient(self, group):
        report = grad_check(_corrupt_sign=group)
        assert not report.passed
        assert report.errors[group] > report.tolerance
