"""Parameter containers and transformer building blocks.

Blocks follow the pre-normalization residual convention:
norm -> attention -> add, norm -> feed-forward(4x width, GELU) -> add.
All containers are plain dataclasses of Tensors; ``collect_named`` walks
them to produce the flat name->Tensor map used by the optimizer and the
checkpoint writer.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, is_dataclass

import numpy as np

from .ndcore import Tensor, add, gelu, layer_norm, matmul, multi_head_attention

WEIGHT_STD = 0.02


@dataclass
class LayerNormParams:
    gain: Tensor
    bias: Tensor
    eps: float = 1e-5


@dataclass
class AttentionParams:
    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor


@dataclass
class FeedForwardParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor


@dataclass
class SelfAttnBlockParams:
    """Pre-norm residual block: self-attention then feed-forward."""
    ln1: LayerNormParams
    attn: AttentionParams
    ln2: LayerNormParams
    ffn: FeedForwardParams
    heads: int


@dataclass
class CrossAttnBlockParams:
    """Pre-norm residual block where a query attends onto a fixed sequence."""
    ln_q: LayerNormParams
    ln_kv: LayerNormParams
    attn: AttentionParams
    ln_f: LayerNormParams
    ffn: FeedForwardParams
    heads: int


def init_layer_norm(d: int) -> LayerNormParams:
    return LayerNormParams(gain=Tensor(np.ones(d), requires_grad=True),
                           bias=Tensor(np.zeros(d), requires_grad=True))


def init_attention(d: int, rng: np.random.Generator) -> AttentionParams:
    def w():
        return Tensor(rng.normal(0.0, WEIGHT_STD, (d, d)), requires_grad=True)

    def b():
        return Tensor(np.zeros(d), requires_grad=True)

    return AttentionParams(wq=w(), bq=b(), wk=w(), bk=b(),
                           wv=w(), bv=b(), wo=w(), bo=b())


def init_feed_forward(d: int, rng: np.random.Generator, hidden_mult: int = 4) -> FeedForwardParams:
    h = hidden_mult * d
    return FeedForwardParams(
        w1=Tensor(rng.normal(0.0, WEIGHT_STD, (d, h)), requires_grad=True),
        b1=Tensor(np.zeros(h), requires_grad=True),
        w2=Tensor(rng.normal(0.0, WEIGHT_STD, (h, d)), requires_grad=True),
        b2=Tensor(np.zeros(d), requires_grad=True),
    )


def init_self_attn_block(d: int, heads: int, rng: np.random.Generator) -> SelfAttnBlockParams:
    return SelfAttnBlockParams(ln1=init_layer_norm(d), attn=init_attention(d, rng),
                               ln2=init_layer_norm(d), ffn=init_feed_forward(d, rng),
                               heads=heads)


def init_cross_attn_block(d: int, heads: int, rng: np.random.Generator) -> CrossAttnBlockParams:
    return CrossAttnBlockParams(ln_q=init_layer_norm(d), ln_kv=init_layer_norm(d),
                                attn=init_attention(d, rng), ln_f=init_layer_norm(d),
                                ffn=init_feed_forward(d, rng), heads=heads)


def feed_forward(x: Tensor, p: FeedForwardParams) -> Tensor:
    return add(matmul(gelu(add(matmul(x, p.w1), p.b1)), p.w2), p.b2)


def apply_layer_norm(x: Tensor, p: LayerNormParams) -> Tensor:
    return layer_norm(x, p.gain, p.bias, eps=p.eps)


def self_attn_block(x: Tensor, p: SelfAttnBlockParams) -> Tensor:
    a = apply_layer_norm(x, p.ln1)
    x = add(x, multi_head_attention(a, a, p.attn, p.heads, mask=None))
    return add(x, feed_forward(apply_layer_norm(x, p.ln2), p.ffn))


def cross_attn_block(q: Tensor, kv: Tensor, p: CrossAttnBlockParams) -> Tensor:
    qa = apply_layer_norm(q, p.ln_q)
    ka = apply_layer_norm(kv, p.ln_kv)
    q = add(q, multi_head_attention(qa, ka, p.attn, p.heads, mask=None))
    return add(q, feed_forward(apply_layer_norm(q, p.ln_f), p.ffn))


def collect_named(obj, prefix: str = "") -> dict[str, Tensor]:
    """Flatten a nested structure of dataclasses / lists / Tensors into a
    name->Tensor map with dotted paths.  Order is deterministic (field
    declaration order, list index order)."""
    out: dict[str, Tensor] = {}
    if isinstance(obj, Tensor):
        out[prefix] = obj
    elif is_dataclass(obj):
        for f in fields(obj):
            val = getattr(obj, f.name)
            if isinstance(val, (int, float, str, bool)) or val is None:
                continue
            key = f"{prefix}.{f.name}" if prefix else f.name
            out.update(collect_named(val, key))
    elif isinstance(obj, (list, tuple)):
        for i, val in enumerate(obj):
            key = f"{prefix}.{i}" if prefix else str(i)
            out.update(collect_named(val, key))
    elif isinstance(obj, dict):
        for k in obj:
            key = f"{prefix}.{k}" if prefix else str(k)
            out.update(collect_named(obj[k], key))
    return out


def set_requires_grad(obj, flag: bool) -> None:
    for t in collect_named(obj).values():
        t.requires_grad = flag
