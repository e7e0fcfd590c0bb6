"""Predictor: unmasked transformer over augmented visual tokens plus
learnable query tokens, projecting to the text embedding space.

No positional encoding is added inside the predictor, so permuting the
input tokens permutes the pre-pool outputs correspondingly and leaves the
pooled embedding unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ndcore
from .layers import SelfAttnBlockParams, init_self_attn_block, self_attn_block
from .ndcore import Tensor


@dataclass
class PredictorParams:
    queries: Tensor                      # [n_query, D_v], learnable
    blocks: list[SelfAttnBlockParams]    # unmasked, pre-norm
    w_out: Tensor                        # [D_v, D_t]
    pool_mode: str = "all"               # "all" | "query": which outputs feed the mean

    @property
    def n_query(self) -> int:
        return self.queries.shape[0]


def init_predictor(d_v: int, d_t: int, depth: int = 4, heads: int = 4,
                   n_query: int = 4, rng: np.random.Generator | None = None,
                   pool_mode: str = "all") -> PredictorParams:
    rng = rng if rng is not None else np.random.default_rng(0)
    if pool_mode not in ("all", "query"):
        raise ValueError(f"unknown pool_mode {pool_mode!r}")
    return PredictorParams(
        queries=Tensor(rng.normal(0.0, 0.02, (n_query, d_v)), requires_grad=True),
        blocks=[init_self_attn_block(d_v, heads, rng) for _ in range(depth)],
        w_out=Tensor(rng.normal(0.0, 0.02, (d_v, d_t)), requires_grad=True),
        pool_mode=pool_mode,
    )


def predict_tokens(z_aug: Tensor, params: PredictorParams) -> Tensor:
    """Run [z_aug ; queries] through the blocks; returns all output states.

    ``z_aug`` is [N, D_v] or batched [B, N, D_v]; output appends n_query
    rows.  A zero-block configuration returns the concatenation unchanged.
    """
    if z_aug.ndim not in (2, 3) or z_aug.shape[-2] < 1:
        raise ValueError(f"predictor needs [N>=1, D_v] tokens, got {z_aug.shape}")
    if z_aug.ndim == 3:
        q = ndcore.expand_leading(params.queries, z_aug.shape[0])
        x = ndcore.concat([z_aug, q], axis=1)
    else:
        x = ndcore.concat([z_aug, params.queries], axis=0)
    for block in params.blocks:
        x = self_attn_block(x, block)
    return x


def _pooled(outputs: Tensor, params: PredictorParams) -> Tensor:
    if params.pool_mode == "query":
        n = outputs.shape[-2]
        if outputs.ndim == 3:
            outputs = ndcore.swapaxes(
                ndcore.slice_rows(ndcore.swapaxes(outputs, 0, 1), n - params.n_query, n), 0, 1)
        else:
            outputs = ndcore.slice_rows(outputs, n - params.n_query, n)
    return ndcore.tmean(outputs, axis=-2)


def pool_project(outputs: Tensor, params: PredictorParams) -> Tensor:
    """h = mean over output tokens, then times W_out.  Batched when
    ``outputs`` is [B, N', D_v]."""
    if outputs.shape[-2] < 1:
        raise ValueError("pool_project needs at least one output token")
    pooled = _pooled(outputs, params)
    if pooled.ndim == 1:
        pooled = ndcore.reshape(pooled, (1,) + pooled.shape)
        return ndcore.reshape(ndcore.matmul(pooled, params.w_out), (params.w_out.shape[1],))
    return ndcore.matmul(pooled, params.w_out)


def token_embed(outputs: Tensor, params: PredictorParams, i: int) -> Tensor:
    """Per-token embedding outputs[i] . W_out (heatmaps read these)."""
    if outputs.ndim != 2:
        raise ValueError("token_embed expects unbatched outputs [N', D_v]")
    if not 0 <= i < outputs.shape[0]:
        raise IndexError(f"token index {i} out of range for {outputs.shape[0]} outputs")
    row = ndcore.slice_rows(outputs, i, i + 1)
    return ndcore.reshape(ndcore.matmul(row, params.w_out), (params.w_out.shape[1],))
