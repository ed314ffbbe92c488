"""Layer behavior: attention degeneracies, encoder equivariance, gradchecks."""

import numpy as np
import pytest

from sgretrieval.errors import HeadsDoNotDivide
from sgretrieval.numerics import (MLP, LayerNorm, Linear, MultiHeadAttention, Tensor,
                                  TransformerEncoder, finite_difference_check)
from sgretrieval.numerics import tensor as T


def f64(rng, shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True, dtype=np.float64)


class TestMultiHeadAttention:
    def test_heads_must_divide(self):
        with pytest.raises(HeadsDoNotDivide):
            MultiHeadAttention(10, 3, np.random.default_rng(0))

    def test_single_key_value_ignores_query(self):
        # with one key/value row the attention weight is forced to 1, so the
        # output is the projected value row no matter what the query holds
        rng = np.random.default_rng(1)
        mha = MultiHeadAttention(8, 2, rng)
        kv = Tensor(rng.standard_normal((1, 8)).astype(np.float32))
        q1 = Tensor(rng.standard_normal((3, 8)).astype(np.float32))
        q2 = Tensor(rng.standard_normal((3, 8)).astype(np.float32))
        out1 = mha(q1, kv, kv).data
        out2 = mha(q2, kv, kv).data
        np.testing.assert_allclose(out1, out2, atol=1e-6)
        np.testing.assert_allclose(out1[0], out1[1], atol=1e-6)

    def test_identical_keys_give_uniform_weights(self):
        rng = np.random.default_rng(2)
        mha = MultiHeadAttention(8, 2, rng)
        row = rng.standard_normal((1, 8)).astype(np.float32)
        k = Tensor(np.repeat(row, 5, axis=0))
        v = Tensor(rng.standard_normal((5, 8)).astype(np.float32))
        q = Tensor(rng.standard_normal((2, 8)).astype(np.float32))
        mha(q, k, v)
        np.testing.assert_allclose(mha.last_attn, 0.2, atol=1e-6)

    def test_weights_rows_sum_to_one(self):
        rng = np.random.default_rng(3)
        mha = MultiHeadAttention(12, 4, rng)
        q, k, v = (Tensor(rng.standard_normal(s).astype(np.float32))
                   for s in ((5, 12), (7, 12), (7, 12)))
        mha(q, k, v)
        np.testing.assert_allclose(mha.last_attn.sum(axis=-1), 1.0, atol=1e-6)

    def test_gradcheck_4x8_2heads(self):
        rng = np.random.default_rng(4)
        mha = MultiHeadAttention(8, 2, rng, dtype=np.float64)
        q, k, v = f64(rng, (4, 8)), f64(rng, (4, 8)), f64(rng, (4, 8))
        w = f64(rng, (4, 8))
        err = finite_difference_check(
            lambda: T.sum_(T.mul(mha(q, k, v), w)), mha.parameters(), rng=rng)
        assert err < 1e-3


class TestTransformerEncoder:
    def test_zero_layers_disallowed(self):
        with pytest.raises(ValueError):
            TransformerEncoder(8, 0, 2, 0.0, np.random.default_rng(0))

    def test_permutation_equivariance(self):
        # no positional encoding: permuting input rows permutes output rows
        rng = np.random.default_rng(5)
        enc = TransformerEncoder(16, 2, 4, 0.0, rng)
        enc.eval()
        x = rng.standard_normal((6, 16)).astype(np.float32)
        perm = np.random.default_rng(6).permutation(6)
        out = enc(Tensor(x)).data
        out_perm = enc(Tensor(x[perm])).data
        np.testing.assert_allclose(out_perm, out[perm], atol=1e-5)

    def test_deterministic_with_dropout_disabled(self):
        rng = np.random.default_rng(7)
        enc = TransformerEncoder(8, 1, 2, 0.1, rng)
        enc.eval()
        x = Tensor(np.random.default_rng(8).standard_normal((4, 8)).astype(np.float32))
        assert enc(x).data.tobytes() == enc(x).data.tobytes()

    def test_gradcheck_5x16_1layer_2heads(self):
        rng = np.random.default_rng(9)
        enc = TransformerEncoder(16, 1, 2, 0.0, rng, dtype=np.float64)
        enc.eval()
        x = f64(rng, (5, 16))
        w = f64(rng, (5, 16))
        err = finite_difference_check(
            lambda: T.sum_(T.mul(enc(x), w)), enc.parameters(), rng=rng)
        assert err < 1e-3

    def test_batched_input_matches_loop(self):
        rng = np.random.default_rng(10)
        enc = TransformerEncoder(8, 1, 2, 0.0, rng)
        enc.eval()
        xs = np.random.default_rng(11).standard_normal((3, 4, 8)).astype(np.float32)
        batched = enc(Tensor(xs)).data
        for i in range(3):
            np.testing.assert_allclose(batched[i], enc(Tensor(xs[i])).data, atol=1e-5)


class TestSmallLayers:
    def test_linear_gradcheck(self):
        rng = np.random.default_rng(12)
        lin = Linear(6, 4, rng, dtype=np.float64)
        x = f64(rng, (3, 6))
        err = finite_difference_check(lambda: T.sum_(lin(x)), lin.parameters() + [x], rng=rng)
        assert err < 1e-3

    def test_mlp_gradcheck(self):
        rng = np.random.default_rng(13)
        mlp = MLP([5, 8, 3], rng, dtype=np.float64)
        x = f64(rng, (4, 5))
        w = f64(rng, (4, 3))
        err = finite_difference_check(
            lambda: T.sum_(T.mul(mlp(x), w)), mlp.parameters() + [x], rng=rng)
        assert err < 1e-3

    def test_layernorm_layer_initial_moments(self):
        rng = np.random.default_rng(14)
        ln = LayerNorm(12)
        out = ln(Tensor(rng.standard_normal((5, 12)).astype(np.float32))).data
        np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-5)
        np.testing.assert_allclose(out.var(axis=-1), 1.0, atol=1e-4)
