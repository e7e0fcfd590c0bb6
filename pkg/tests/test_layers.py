"""Residual blocks and the named-parameter walker."""

import numpy as np
import pytest

from trajpred import ndcore
from trajpred.layers import (
    apply_layer_norm,
    collect_named,
    cross_attn_block,
    feed_forward,
    init_cross_attn_block,
    init_feed_forward,
    init_layer_norm,
    init_self_attn_block,
    self_attn_block,
    set_requires_grad,
)
from trajpred.ndcore import Tensor

import oracles


def test_feed_forward_formula():
    rng = np.random.default_rng(0)
    p = init_feed_forward(6, rng)
    x = rng.normal(size=(3, 6))
    got = feed_forward(Tensor(x), p).data
    hidden = oracles.gelu_ref(x @ p.w1.data + p.b1.data)
    want = hidden @ p.w2.data + p.b2.data
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_layer_norm_params_start_as_identity_affine():
    p = init_layer_norm(5)
    assert np.array_equal(p.gain.data, np.ones(5))
    assert np.array_equal(p.bias.data, np.zeros(5))
    x = np.random.default_rng(1).normal(size=(4, 5))
    out = apply_layer_norm(Tensor(x), p).data
    np.testing.assert_allclose(out.mean(axis=1), 0.0, atol=1e-12)


def test_self_attn_block_collapses_to_identity_when_outputs_zeroed():
    # pre-norm residual: if the attention output projection and the FFN's
    # second matrix (and biases) are zero, the block is the identity map
    rng = np.random.default_rng(2)
    p = init_self_attn_block(8, 2, rng)
    p.attn.wo.data[:] = 0.0
    p.attn.bo.data[:] = 0.0
    p.ffn.w2.data[:] = 0.0
    p.ffn.b2.data[:] = 0.0
    x = rng.normal(size=(5, 8))
    np.testing.assert_allclose(self_attn_block(Tensor(x), p).data, x, atol=1e-15)


def test_cross_attn_block_collapses_to_identity_when_outputs_zeroed():
    rng = np.random.default_rng(3)
    p = init_cross_attn_block(8, 2, rng)
    p.attn.wo.data[:] = 0.0
    p.attn.bo.data[:] = 0.0
    p.ffn.w2.data[:] = 0.0
    p.ffn.b2.data[:] = 0.0
    q = rng.normal(size=(2, 8))
    kv = rng.normal(size=(6, 8))
    np.testing.assert_allclose(cross_attn_block(Tensor(q), Tensor(kv), p).data,
                               q, atol=1e-15)


def test_self_attn_block_structure_against_manual_composition():
    rng = np.random.default_rng(4)
    p = init_self_attn_block(8, 2, rng)
    x = Tensor(rng.normal(size=(4, 8)))
    got = self_attn_block(x, p).data
    a = apply_layer_norm(x, p.ln1)
    mid = ndcore.add(x, ndcore.multi_head_attention(a, a, p.attn, p.heads))
    want = ndcore.add(mid, feed_forward(apply_layer_norm(mid, p.ln2), p.ffn)).data
    np.testing.assert_array_equal(got, want)


def test_block_gradients_reach_every_parameter():
    rng = np.random.default_rng(5)
    p = init_self_attn_block(8, 2, rng)
    named = collect_named(p, "blk")
    x = Tensor(rng.normal(size=(3, 8)), requires_grad=True)
    loss = ndcore.tsum(ndcore.mul(self_attn_block(x, p),
                                  Tensor(rng.normal(size=(3, 8)))))
    ndcore.backward(loss)
    for name, t in named.items():
        assert t.grad is not None, f"{name} got no gradient"


def test_collect_named_paths_and_order():
    rng = np.random.default_rng(6)
    p = init_cross_attn_block(4, 2, rng)
    named = collect_named(p, "x")
    assert "x.attn.wq" in named and "x.ffn.w2" in named and "x.ln_q.gain" in named
    assert list(named) == list(collect_named(p, "x"))  # deterministic order
    # every entry is a Tensor and names are unique
    assert all(isinstance(t, Tensor) for t in named.values())
    assert len(set(named)) == len(named)


def test_collect_named_handles_lists():
    rng = np.random.default_rng(7)
    blocks = [init_self_attn_block(4, 2, rng) for _ in range(2)]
    named = collect_named(blocks, "b")
    assert "b.0.attn.wq" in named and "b.1.ffn.b1" in named


def test_set_requires_grad_flips_everything():
    rng = np.random.default_rng(8)
    p = init_self_attn_block(4, 2, rng)
    set_requires_grad(p, False)
    assert all(not t.requires_grad for t in collect_named(p).values())
    set_requires_grad(p, True)
    assert all(t.requires_grad for t in collect_named(p).values())


def test_cross_attn_block_grads_vs_finite_differences():
    rng = np.random.default_rng(9)
    p = init_cross_attn_block(8, 2, rng)
    q = Tensor(rng.normal(size=(2, 8)), requires_grad=True)
    kv = Tensor(rng.normal(size=(5, 8)), requires_grad=True)
    w = rng.normal(size=(2, 8))

    def loss():
        return ndcore.tsum(ndcore.mul(cross_attn_block(q, kv, p), Tensor(w)))

    ndcore.backward(loss())
    for t in (q, kv, p.attn.wk, p.ffn.w1, p.ln_kv.gain):
        numeric = oracles.central_diff_grad(loss, t)
        assert oracles.max_rel_err(t.grad, numeric) <= 1e-4
