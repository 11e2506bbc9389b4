import math

import numpy as np
import pytest

from attntrack import tensor as T
from attntrack.attention import (AttentionHeadWeights, AttentionInputs,
                                 FfnWeights, MultiHeadWeights, attention_output,
                                 attention_weights, ffn, init_layernorm,
                                 init_multi_head, multi_head_attention,
                                 project_qkv, residual_norm)
from attntrack.errors import ConfigurationError
from attntrack.tensor import Tensor


def softmax_np(logits):
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def inputs_with(xq, xkv, pq=None, pk=None):
    xq, xkv = np.asarray(xq, float), np.asarray(xkv, float)
    pq = np.zeros_like(xq) if pq is None else np.asarray(pq, float)
    pk = np.zeros_like(xkv) if pk is None else np.asarray(pk, float)
    return AttentionInputs(Tensor(xq), Tensor(xkv), Tensor(pq), Tensor(pk))


class TestProjectQkv:
    def test_identity_projections(self):
        rng = np.random.default_rng(0)
        xq, xkv = rng.standard_normal((2, 3)), rng.standard_normal((4, 3))
        eye = lambda: Tensor(np.eye(3))
        w = AttentionHeadWeights(wq=eye(), wk=eye(), wv=eye())
        q, k, v = project_qkv(inputs_with(xq, xkv), w)
        assert np.array_equal(q.data, xq)
        assert np.array_equal(k.data, xkv)
        assert np.array_equal(v.data, xkv)

    def test_one_hot_selects_weight_row(self):
        rng = np.random.default_rng(1)
        wq = rng.standard_normal((3, 3))
        w = AttentionHeadWeights(wq=Tensor(wq), wk=Tensor(np.eye(3)),
                                 wv=Tensor(np.eye(3)))
        xq = np.array([[0.0, 1.0, 0.0]])
        q, _, _ = project_qkv(inputs_with(xq, np.zeros((1, 3))), w)
        assert np.allclose(q.data[0], wq[1])

    def test_positions_added_to_q_and_k_only(self):
        rng = np.random.default_rng(2)
        xq, xkv = rng.standard_normal((2, 3)), rng.standard_normal((3, 3))
        pq, pk = rng.standard_normal((2, 3)), rng.standard_normal((3, 3))
        wq, wk, wv = (rng.standard_normal((3, 3)) for _ in range(3))
        w = AttentionHeadWeights(wq=Tensor(wq), wk=Tensor(wk), wv=Tensor(wv))
        q, k, v = project_qkv(inputs_with(xq, xkv, pq, pk), w)
        assert np.abs(q.data - (xq + pq) @ wq).max() < 1e-12
        assert np.abs(k.data - (xkv + pk) @ wk).max() < 1e-12
        assert np.abs(v.data - xkv @ wv).max() < 1e-12  # no positions on values


class TestAttentionWeights:
    def test_orthogonal_gives_uniform(self):
        q = Tensor(np.zeros((2, 4)))
        k = Tensor(np.ones((3, 4)))
        a = attention_weights(q, k)
        assert np.allclose(a.data, 1.0 / 3.0, atol=1e-12)

    def test_scalar_closed_form(self):
        a = attention_weights(Tensor([[2.0]]), Tensor([[1.0], [0.0]]))
        e2 = math.exp(2.0)
        expected = [e2 / (e2 + 1.0), 1.0 / (e2 + 1.0)]
        assert np.allclose(a.data[0], expected, atol=1e-12)
        assert abs(a.data[0, 0] - 0.8808) < 1e-4

    def test_duplicate_keys_share_weight(self):
        rng = np.random.default_rng(3)
        q = Tensor(rng.standard_normal((3, 4)))
        krows = rng.standard_normal((3, 4))
        k = Tensor(np.vstack([krows, krows[1]]))  # row 3 duplicates row 1
        a = attention_weights(q, k)
        assert np.abs(a.data[:, 1] - a.data[:, 3]).max() < 1e-12

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(4)
        a = attention_weights(Tensor(rng.standard_normal((5, 8)) * 4),
                              Tensor(rng.standard_normal((6, 8)) * 4))
        assert np.abs(a.data.sum(axis=1) - 1.0).max() < 1e-9

    def test_scale_factor_via_channel_duplication(self):
        # duplicating channels and shrinking keys by sqrt(2) must leave the
        # logits (hence weights) unchanged iff the 1/sqrt(d') factor is used
        rng = np.random.default_rng(5)
        q = rng.standard_normal((3, 4))
        k = rng.standard_normal((5, 4))
        base = attention_weights(Tensor(q), Tensor(k))
        doubled = attention_weights(Tensor(np.hstack([q, q])),
                                    Tensor(np.hstack([k, k]) / math.sqrt(2.0)))
        assert np.abs(base.data - doubled.data).max() < 1e-12


class TestAttentionOutput:
    def test_identity_weights(self):
        rng = np.random.default_rng(6)
        v = rng.standard_normal((3, 4))
        out = attention_output(Tensor(np.eye(3)), Tensor(v))
        assert np.array_equal(out.data, v)

    def test_uniform_weights_average(self):
        rng = np.random.default_rng(7)
        v = rng.standard_normal((4, 3))
        a = np.full((2, 4), 0.25)
        out = attention_output(Tensor(a), Tensor(v))
        assert np.abs(out.data - v.mean(axis=0)).max() < 1e-12


def manual_multi_head(xq, xkv, pq, pk, w: MultiHeadWeights):
    """Straight-line oracle composing the four single-head operations."""
    pieces = []
    for head in w.heads:
        q = (xq + pq) @ head.wq.data
        k = (xkv + pk) @ head.wk.data
        v = xkv @ head.wv.data
        a = softmax_np((q @ k.T) / math.sqrt(q.shape[1]))
        pieces.append(a @ v)
    return np.hstack(pieces) @ w.wo.data


class TestMultiHead:
    def test_single_head_with_identity_projection(self):
        rng = np.random.default_rng(8)
        d = 4
        w = init_multi_head(rng, d, 1)
        w.wo = Tensor(np.eye(d))
        xq, xkv = rng.standard_normal((2, d)), rng.standard_normal((3, d))
        inputs = inputs_with(xq, xkv)
        out = multi_head_attention(inputs, w)
        q, k, v = project_qkv(inputs, w.heads[0])
        single = attention_output(attention_weights(q, k), v)
        assert np.abs(out.data - single.data).max() < 1e-12

    def test_dead_head_zeroes_half_the_concat(self):
        rng = np.random.default_rng(9)
        d = 4
        w = init_multi_head(rng, d, 2)
        w.heads[1].wv = Tensor(np.zeros((d, d // 2)))
        w.wo = Tensor(np.eye(d))  # expose the concat directly
        xq, xkv = rng.standard_normal((3, d)), rng.standard_normal((3, d))
        out = multi_head_attention(inputs_with(xq, xkv), w)
        assert np.abs(out.data[:, d // 2:]).max() == 0.0
        assert np.abs(out.data[:, :d // 2]).max() > 0.0

    def test_against_composition_oracle(self):
        rng = np.random.default_rng(10)
        d = 4
        w = init_multi_head(rng, d, 2)
        xq, xkv = rng.standard_normal((3, d)), rng.standard_normal((5, d))
        pq, pk = rng.standard_normal((3, d)), rng.standard_normal((5, d))
        out = multi_head_attention(inputs_with(xq, xkv, pq, pk), w)
        assert np.abs(out.data - manual_multi_head(xq, xkv, pq, pk, w)).max() < 1e-12

    def test_head_count_must_divide_width(self):
        with pytest.raises(ConfigurationError):
            init_multi_head(np.random.default_rng(0), 6, 4)

    def test_kv_permutation_invariance_without_positions(self):
        rng = np.random.default_rng(11)
        d = 4
        w = init_multi_head(rng, d, 2)
        xq = rng.standard_normal((3, d))
        xkv = rng.standard_normal((5, d))
        perm = rng.permutation(5)
        out = multi_head_attention(inputs_with(xq, xkv), w)
        out_perm = multi_head_attention(inputs_with(xq, xkv[perm]), w)
        assert np.abs(out.data - out_perm.data).max() < 1e-9

    def test_query_permutation_equivariance_without_positions(self):
        rng = np.random.default_rng(12)
        d = 4
        w = init_multi_head(rng, d, 2)
        xq = rng.standard_normal((4, d))
        xkv = rng.standard_normal((5, d))
        perm = rng.permutation(4)
        out = multi_head_attention(inputs_with(xq, xkv), w)
        out_perm = multi_head_attention(inputs_with(xq[perm], xkv), w)
        assert np.abs(out.data[perm] - out_perm.data).max() < 1e-9

    def test_padding_positions_get_identical_columns(self):
        # equal key features + equal (zeroed) positional rows => every query
        # assigns the two positions the same weight
        rng = np.random.default_rng(13)
        d = 4
        w = init_multi_head(rng, d, 2)
        xq = rng.standard_normal((3, d))
        pad_row = rng.standard_normal(d)
        xkv = np.vstack([rng.standard_normal((2, d)), pad_row, pad_row])
        pk = np.vstack([rng.standard_normal((2, d)), np.zeros(d), np.zeros(d)])
        sink = []
        multi_head_attention(inputs_with(xq, xkv, None, pk), w, attn_sink=sink)
        for a in sink:
            assert np.abs(a[:, 2] - a[:, 3]).max() < 1e-12


class TestResidualNorm:
    def test_cancellation(self):
        rng = np.random.default_rng(14)
        ln = init_layernorm(4)
        xq = Tensor(rng.standard_normal((3, 4)))
        out = residual_norm(T.mul(xq, -1.0), xq, ln)
        assert np.allclose(out.data, 0.0)

    def test_zero_attention_passthrough(self):
        rng = np.random.default_rng(15)
        ln = init_layernorm(4)
        xq = Tensor(rng.standard_normal((3, 4)))
        out = residual_norm(Tensor(np.zeros((3, 4))), xq, ln)
        expected = T.layernorm(xq, ln.gain, ln.bias, ln.eps)
        assert np.array_equal(out.data, expected.data)

    def test_add_then_normalize_oracle(self):
        rng = np.random.default_rng(16)
        ln = init_layernorm(4)
        a = rng.standard_normal((3, 4))
        b = rng.standard_normal((3, 4))
        out = residual_norm(Tensor(a), Tensor(b), ln)
        s = a + b
        mu = s.mean(axis=1, keepdims=True)
        var = s.var(axis=1, keepdims=True)
        expected = (s - mu) / np.sqrt(var + ln.eps)
        assert np.abs(out.data - expected).max() < 1e-12


class TestFfn:
    def _dead_ffn(self, d, h):
        ln = init_layernorm(d)
        return FfnWeights(w1=Tensor(np.zeros((d, h))), b1=Tensor(np.zeros(h)),
                          w2=Tensor(np.zeros((h, d))), b2=Tensor(np.zeros(d)),
                          norm=ln)

    def test_dead_ffn_is_layernorm(self):
        rng = np.random.default_rng(17)
        x = Tensor(rng.standard_normal((3, 4)))
        w = self._dead_ffn(4, 8)
        out = ffn(x, w)
        expected = T.layernorm(x, w.norm.gain, w.norm.bias, w.norm.eps)
        assert np.array_equal(out.data, expected.data)

    def test_relu_gates_negative_preactivations(self):
        rng = np.random.default_rng(18)
        d, h = 4, 8
        w = self._dead_ffn(d, h)
        w.w1 = Tensor(rng.standard_normal((d, h)))
        w.b1 = Tensor(np.full(h, -1e6))  # all pre-activations negative
        w.w2 = Tensor(rng.standard_normal((h, d)))
        x = Tensor(rng.standard_normal((3, d)))
        out = ffn(x, w)
        expected = T.layernorm(x, w.norm.gain, w.norm.bias, w.norm.eps)
        assert np.array_equal(out.data, expected.data)

    def test_against_straight_line_oracle(self):
        rng = np.random.default_rng(19)
        d, h = 2, 4
        w = FfnWeights(w1=Tensor(rng.standard_normal((d, h))),
                       b1=Tensor(rng.standard_normal(h)),
                       w2=Tensor(rng.standard_normal((h, d))),
                       b2=Tensor(rng.standard_normal(d)),
                       norm=init_layernorm(d))
        x = rng.standard_normal((3, d))
        out = ffn(Tensor(x), w)
        hidden = np.maximum(x @ w.w1.data + w.b1.data, 0.0)
        s = x + hidden @ w.w2.data + w.b2.data
        mu = s.mean(axis=1, keepdims=True)
        expected = (s - mu) / np.sqrt(s.var(axis=1, keepdims=True) + w.norm.eps)
        assert np.abs(out.data - expected).max() < 1e-12
