"""Finite-difference verification of every differentiable operation.

Each check builds small random instances, projects the operation output
onto a fixed random direction to get a scalar, and compares analytic
gradients against central differences. Shared by the test suite and the
``gradcheck`` CLI subcommand.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .attention import (AttentionInputs, ffn, init_ffn, init_layernorm,
                        init_multi_head, multi_head_attention, residual_norm)
from .localize import heads_forward, init_head_weights
from .loss import focal_loss, joint_loss, make_ground_truth, offset_loss, size_loss
from .pipeline.backbone import backbone_forward, init_backbone
from .tensor import Tensor, finite_difference_check
from .transformer import (DecoderInput, EncoderInput, init_transformer,
                          run_transformer)


@dataclass
class CheckResult:
    name: str
    worst_rel_error: float
    failures: int

    @property
    def ok(self) -> bool:
        return self.failures == 0


def _projected(out: Tensor, direction: np.ndarray) -> Tensor:
    return T.tensor_sum(T.mul(out, direction))


def _leaf(rng, *shape) -> Tensor:
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def check_matmul(rng) -> tuple[float, int]:
    a = _leaf(rng, 3, 4)
    b = _leaf(rng, 4, 2)
    r = rng.standard_normal((3, 2))
    return finite_difference_check(lambda: _projected(T.matmul(a, b), r), [a, b])


def check_conv2d(rng) -> tuple[float, int]:
    x = _leaf(rng, 2, 7, 7)
    k = _leaf(rng, 3, 2, 3, 3)
    r = rng.standard_normal((3, 4, 4))
    return finite_difference_check(
        lambda: _projected(T.conv2d(x, k, stride=2, padding=1), r), [x, k])


def check_softmax(rng) -> tuple[float, int]:
    x = _leaf(rng, 3, 5)
    r = rng.standard_normal((3, 5))
    return finite_difference_check(lambda: _projected(T.softmax_rows(x), r), [x])


def check_layernorm(rng) -> tuple[float, int]:
    x = _leaf(rng, 4, 6)
    gain = Tensor(rng.uniform(0.5, 1.5, 6), requires_grad=True)
    bias = Tensor(rng.standard_normal(6), requires_grad=True)
    r = rng.standard_normal((4, 6))
    return finite_difference_check(
        lambda: _projected(T.layernorm(x, gain, bias), r), [x, gain, bias])


def check_elementwise(rng) -> tuple[float, int]:
    x = Tensor(rng.uniform(0.3, 2.0, (4, 4)), requires_grad=True)
    y = _leaf(rng, 4, 4)
    r = rng.standard_normal((4, 4))

    def loss():
        mix = T.add(T.mul(T.sigmoid(y), T.log(x)),
                    T.mul(T.relu(y), T.power(x, 1.7)))
        return _projected(T.add(mix, T.absolute(y)), r)

    return finite_difference_check(loss, [x, y])


def check_attention(rng) -> tuple[float, int]:
    d, heads, nq, nkv = 8, 2, 3, 4
    w = init_multi_head(rng, d, heads)
    ln = init_layernorm(d)
    xq = _leaf(rng, nq, d)
    xkv = _leaf(rng, nkv, d)
    pq = Tensor(rng.standard_normal((nq, d)))
    pk = Tensor(rng.standard_normal((nkv, d)))
    r = rng.standard_normal((nq, d))
    params = [xq, xkv, ln.gain, ln.bias]
    for head in w.heads:
        params += [head.wq, head.wk, head.wv]
    params.append(w.wo)

    def loss():
        out = multi_head_attention(AttentionInputs(xq, xkv, pq, pk), w)
        return _projected(residual_norm(out, xq, ln), r)

    return finite_difference_check(loss, params)


def check_ffn(rng) -> tuple[float, int]:
    d = 6
    w = init_ffn(rng, d, 12)
    x = _leaf(rng, 3, d)
    r = rng.standard_normal((3, d))
    params = [x, w.w1, w.b1, w.w2, w.b2, w.norm.gain, w.norm.bias]
    return finite_difference_check(lambda: _projected(ffn(x, w), r), params)


def check_heads(rng) -> tuple[float, int]:
    d = 6
    weights = init_head_weights(rng, d, score_bias=-0.5)
    x = _leaf(rng, 3, 3, d)
    rs = rng.standard_normal((3, 3, 1))
    ro = rng.standard_normal((3, 3, 2))
    params = [x] + [p for _, p in weights.named_parameters()]

    def loss():
        maps = heads_forward(x, weights, stride=8)
        return T.add(_projected(maps.score, rs),
                     T.add(_projected(maps.offset, ro),
                           _projected(maps.size, ro)))

    return finite_difference_check(loss, params)


def check_losses(rng) -> tuple[float, int]:
    hs = ws = 4
    target = make_ground_truth(center=(13.0, 17.5), box_size=(10.0, 14.0),
                               patch_w=hs * 8, patch_h=ws * 8, stride=8,
                               hs=hs, ws=ws)
    logits = Tensor(rng.uniform(-1.5, 1.5, (hs, ws)), requires_grad=True)
    off = Tensor(rng.uniform(0.1, 0.9, (hs, ws, 2)), requires_grad=True)
    size = Tensor(rng.uniform(0.1, 0.9, (hs, ws, 2)), requires_grad=True)

    def loss():
        return joint_loss(focal_loss(T.sigmoid(logits), target.label),
                          offset_loss(off, target.center, 8),
                          size_loss(size, target.norm_size, target.cell))

    return finite_difference_check(loss, [logits, off, size])


def check_backbone(rng) -> tuple[float, int]:
    weights = init_backbone(rng, c_mid=4, d=4)
    x = Tensor(rng.uniform(0.0, 1.0, (3, 16, 16)), requires_grad=True)
    r1 = rng.standard_normal((4, 2, 2))
    r2 = rng.standard_normal((4, 2, 2))
    params = [x] + [p for _, p in weights.named_parameters()]

    def loss():
        mid, out = backbone_forward(x, weights)
        return T.add(_projected(mid, r1), _projected(out, r2))

    return finite_difference_check(loss, params, max_entries=24, rng=rng)


def check_full_stack(rng) -> tuple[float, int]:
    """Template grid 2x2, search grid 4x4, width 8, 2 heads: the whole model."""
    h, w, hh, ww, d, heads = 2, 2, 4, 4, 8, 2
    weights = init_transformer(rng, d, heads, 1, 1, ffn_hidden=2 * d)
    head_weights = init_head_weights(rng, d, score_bias=-0.5)
    z = _leaf(rng, h, w, d)
    x = _leaf(rng, hh, ww, d)
    target = make_ground_truth(center=(17.0, 14.0), box_size=(12.0, 9.0),
                               patch_w=hh * 8, patch_h=ww * 8, stride=8,
                               hs=hh, ws=ww)
    params = [z, x]
    params += [p for _, p in weights.named_parameters()]
    params += [p for _, p in head_weights.named_parameters()]

    def loss():
        decoded = run_transformer(EncoderInput(z), DecoderInput(x), weights)
        maps = heads_forward(decoded, head_weights, stride=8)
        score2d = T.reshape(maps.score, (hh, ww))
        return joint_loss(focal_loss(score2d, target.label),
                          offset_loss(maps.offset, target.center, 8),
                          size_loss(maps.size, target.norm_size, target.cell))

    return finite_difference_check(loss, params, max_entries=12, rng=rng)


_CHECKS = [
    ("matmul", check_matmul),
    ("conv2d", check_conv2d),
    ("softmax_rows", check_softmax),
    ("layernorm", check_layernorm),
    ("elementwise", check_elementwise),
    ("attention", check_attention),
    ("ffn", check_ffn),
    ("heads", check_heads),
    ("losses", check_losses),
    ("backbone", check_backbone),
    ("full_stack", check_full_stack),
]


def run_gradcheck(seed: int = 0, instances: int = 3,
                  full_stack_instances: int = 1) -> list[CheckResult]:
    """Run every check on several random instances; aggregate worst errors."""
    results = []
    for name, fn in _CHECKS:
        n = full_stack_instances if name == "full_stack" else instances
        worst = 0.0
        failures = 0
        for i in range(n):
            rng = np.random.default_rng(seed * 1000 + i)
            w, fails = fn(rng)
            worst = max(worst, w)
            failures += len(fails)
        results.append(CheckResult(name=name, worst_rel_error=worst,
                                   failures=failures))
    return results
