"""Model assembly.

Bundles the four parameter sets (frozen tubelet encoder, trajectory pools,
predictor, text encoder), exposes a flat name -> Tensor map, assigns every
tensor to exactly one optimizer group, and provides the batched forward pass
used by training and evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ndcore
from .config import RunConfig
from .layers import collect_named
from .ndcore import Tensor
from .predictor import PredictorParams, init_predictor, pool_project, predict_tokens
from .text import TextEncoderParams, TripletVocabulary, init_text_encoder
from .trajectory import (
    AugmentedSequence,
    BoxTrack,
    TrajectoryParams,
    augment,
    box_token_weights,
    build_trajectory_tokens,
    cross_attn_pool_batch,
    init_trajectory_params,
    select_tracks,
    sincos_embed,
)
from .utils import seeded_rng
from .vision import TokenGrid, VideoClip, VisionEncoderParams, init_vision_encoder, tubelet_encode

GROUP_PREDICTOR = "predictor"
GROUP_TRAJECTORY = "trajectory"
GROUP_TEXT_CONTEXT = "text_context"
GROUP_FROZEN = "frozen"
ALL_GROUPS = (GROUP_PREDICTOR, GROUP_TRAJECTORY, GROUP_TEXT_CONTEXT, GROUP_FROZEN)


@dataclass
class TrajPredModel:
    config: RunConfig
    vocab: TripletVocabulary
    vision: VisionEncoderParams
    traj: TrajectoryParams
    pred: PredictorParams
    text: TextEncoderParams


def build_model(config: RunConfig, vocab: TripletVocabulary) -> TrajPredModel:
    """Initialize all parameters deterministically from config.seed."""
    config.validate()
    vision = init_vision_encoder(config.d_v, config.patch, channels=config.channels,
                                 seed=config.seed)
    traj = init_trajectory_params(config.d_v, heads=config.pool_heads,
                                  depth=config.pool_depth,
                                  rng=seeded_rng(config.seed, "trajectory"))
    pred = init_predictor(config.d_v, config.d_t, depth=config.pred_depth,
                          heads=config.pred_heads, n_query=config.n_query,
                          rng=seeded_rng(config.seed, "predictor"),
                          pool_mode=config.pool_mode)
    text = init_text_encoder(vocab, config.d_t, depth=config.txt_depth,
                             heads=config.txt_heads, m_context=config.m_context,
                             seed=config.seed)
    return TrajPredModel(config=config, vocab=vocab, vision=vision, traj=traj,
                         pred=pred, text=text)


def named_parameters(model: TrajPredModel) -> dict[str, Tensor]:
    """Flat dotted-name map over every tensor in the model (frozen included)."""
    out: dict[str, Tensor] = {}
    for prefix, obj in (("vision", model.vision), ("traj", model.traj),
                        ("pred", model.pred), ("text", model.text)):
        out.update(collect_named(obj, prefix))
    return out


def group_of(name: str) -> str:
    if name.startswith("pred."):
        return GROUP_PREDICTOR
    if name.startswith("traj."):
        return GROUP_TRAJECTORY
    if name == "text.context":
        return GROUP_TEXT_CONTEXT
    if name.startswith("vision.") or name == "text.embed" or name.startswith("text.blocks."):
        return GROUP_FROZEN
    raise KeyError(f"parameter {name!r} belongs to no optimizer group")


def parameter_groups(model: TrajPredModel) -> dict[str, dict[str, Tensor]]:
    groups: dict[str, dict[str, Tensor]] = {g: {} for g in ALL_GROUPS}
    for name, t in named_parameters(model).items():
        groups[group_of(name)][name] = t
    return groups


def check_freeze_consistency(model: TrajPredModel) -> None:
    """Frozen-group tensors must not require grad; all others must."""
    for name, t in named_parameters(model).items():
        frozen = group_of(name) == GROUP_FROZEN
        if frozen and t.requires_grad:
            raise RuntimeError(f"frozen parameter {name} has requires_grad=True")
        if not frozen and not t.requires_grad:
            raise RuntimeError(f"trainable parameter {name} has requires_grad=False")


def encode_clip(model: TrajPredModel, clip: VideoClip) -> TokenGrid:
    """Frozen tubelet encoding; safe to cache per clip for a fixed checkpoint."""
    return tubelet_encode(clip, model.vision)


def forward_single(model: TrajPredModel, grid: TokenGrid,
                   tracks: list[BoxTrack] | None = None,
                   use_trajectory: bool | None = None,
                   ) -> tuple[Tensor, AugmentedSequence]:
    """Predictor outputs [N', D_v] plus the augmented sequence for one clip."""
    if use_trajectory is None:
        use_trajectory = model.config.use_trajectory
    kept = select_tracks(tracks or [], model.config.k_max) if use_trajectory else []
    taus = build_trajectory_tokens(grid, kept, model.traj) if kept else []
    aug = augment(grid, taus)
    outputs = predict_tokens(aug.tokens, model.pred)
    return outputs, aug


def clip_embedding(model: TrajPredModel, grid: TokenGrid,
                   tracks: list[BoxTrack] | None = None,
                   use_trajectory: bool | None = None) -> Tensor:
    outputs, _ = forward_single(model, grid, tracks, use_trajectory)
    return pool_project(outputs, model.pred)


def forward_batch(model: TrajPredModel, grids: list[TokenGrid],
                  tracks_per_clip: list[list[BoxTrack]] | None = None,
                  use_trajectory: bool | None = None) -> Tensor:
    """Clip embeddings [B, D_t] for a batch of token grids.

    Matches forward_single clip-by-clip but batches the expensive attention
    work: trajectory pooling is grouped by track length and the predictor by
    trajectory count, then rows are reassembled into input order with a
    constant permutation.
    """
    cfg = model.config
    if use_trajectory is None:
        use_trajectory = cfg.use_trajectory
    b_total = len(grids)
    if b_total == 0:
        raise ValueError("forward_batch needs at least one clip")
    d_v = grids[0].tokens.shape[1]
    for g in grids:
        if g.n_tokens != grids[0].n_tokens or g.tokens.shape[1] != d_v:
            raise ValueError("all grids in a batch must share geometry")

    if use_trajectory and tracks_per_clip is not None:
        selected = [select_tracks(tr, cfg.k_max) for tr in tracks_per_clip]
    else:
        selected = [[] for _ in range(b_total)]

    # pool every track in the batch, grouped by track length
    flat = [(b, tr) for b, trs in enumerate(selected) for tr in trs]
    tau_rows: dict[int, Tensor] = {}
    if flat:
        app_seqs, pos_seqs = [], []
        for b, tr in flat:
            w = box_token_weights(grids[b], tr.boxes)
            app_seqs.append(ndcore.matmul(Tensor(w), grids[b].tokens))
            pos_seqs.append(ndcore.stack([sincos_embed(box, d_v) for _, box in tr.boxes]))
        by_len: dict[int, list[int]] = {}
        for i, (_, tr) in enumerate(flat):
            by_len.setdefault(len(tr.boxes), []).append(i)
        for length in sorted(by_len):
            idxs = by_len[length]
            a_bar = cross_attn_pool_batch(ndcore.stack([app_seqs[i] for i in idxs]),
                                          model.traj.appearance)
            p_bar = cross_attn_pool_batch(ndcore.stack([pos_seqs[i] for i in idxs]),
                                          model.traj.position)
            tau = ndcore.add(a_bar, p_bar)
            for r, i in enumerate(idxs):
                tau_rows[i] = ndcore.slice_rows(tau, r, r + 1)

    taus_of: list[list[Tensor]] = [[] for _ in range(b_total)]
    for i, (b, _) in enumerate(flat):
        taus_of[b].append(tau_rows[i])

    # run the predictor grouped by trajectory count (uniform sequence length)
    by_k: dict[int, list[int]] = {}
    for b in range(b_total):
        by_k.setdefault(len(taus_of[b]), []).append(b)
    h_parts, order = [], []
    for k in sorted(by_k):
        idxs = by_k[k]
        if k == 0:
            z = ndcore.stack([grids[b].tokens for b in idxs])
        else:
            z = ndcore.stack([ndcore.concat([grids[b].tokens] + taus_of[b], axis=0)
                              for b in idxs])
        outputs = predict_tokens(z, model.pred)
        h_parts.append(pool_project(outputs, model.pred))
        order.extend(idxs)
    h = h_parts[0] if len(h_parts) == 1 else ndcore.concat(h_parts, axis=0)
    if order != list(range(b_total)):
        perm = np.zeros((b_total, b_total))
        for r, b in enumerate(order):
            perm[b, r] = 1.0
        h = ndcore.matmul(Tensor(perm), h)
    return h
