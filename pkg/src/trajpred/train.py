"""Two-stage training: stage 1 fits predictor + text context with no
trajectory tokens; stage 2 adds the trajectory branch.  AdamW runs per
parameter group with group-specific learning rates; frozen tensors are never
touched (not even by weight decay, since inactive groups are skipped
entirely)."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import ndcore
from .checkpoint import save_checkpoint
from .model import (
    GROUP_PREDICTOR,
    GROUP_TEXT_CONTEXT,
    GROUP_TRAJECTORY,
    TrajPredModel,
    check_freeze_consistency,
    forward_batch,
    group_of,
    named_parameters,
)
from .ndcore import Tensor
from .text import class_matrix
from .utils import seeded_rng


class MissingGradientError(RuntimeError):
    """A parameter in an active optimizer group received no gradient."""


def similarity_logits(h: Tensor, e: Tensor, scale: float = 1.0) -> Tensor:
    """Cosine similarity of clip embeddings [N, D] against class embeddings
    [C, D], times a fixed scale."""
    return ndcore.scale(ndcore.cosine_matrix(h, e), scale)


def bce_loss(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean multi-label binary cross-entropy on logits (numerically stable)."""
    return ndcore.bce_with_logits(logits, labels)


@dataclass
class _Moments:
    m: np.ndarray
    v: np.ndarray
    step: int = 0


class AdamW:
    """Decoupled-weight-decay Adam over named parameter groups.

    Only groups named in ``step(active)`` are updated; everything else is
    left bit-identical, so freezing a group really freezes it.
    """

    def __init__(self, params: dict[str, Tensor], group_lrs: dict[str, float],
                 weight_decay: float = 0.01, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.group_lrs = dict(group_lrs)
        self.wd = weight_decay
        self.b1, self.b2, self.eps = beta1, beta2, eps
        self.order = sorted(n for n in params if group_of(n) in self.group_lrs)
        self.state = {n: _Moments(np.zeros(params[n].shape), np.zeros(params[n].shape))
                      for n in self.order}

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def step(self, active: set[str]) -> None:
        unknown = active - set(self.group_lrs)
        if unknown:
            raise KeyError(f"unknown optimizer groups {sorted(unknown)}")
        for name in self.order:
            group = group_of(name)
            if group not in active:
                continue
            t = self.params[name]
            if t.grad is None:
                raise MissingGradientError(
                    f"parameter {name} (group {group}) has no gradient; "
                    "was it used in the forward pass?")
            g = t.grad
            st = self.state[name]
            st.step += 1
            st.m = self.b1 * st.m + (1.0 - self.b1) * g
            st.v = self.b2 * st.v + (1.0 - self.b2) * g * g
            m_hat = st.m / (1.0 - self.b1 ** st.step)
            v_hat = st.v / (1.0 - self.b2 ** st.step)
            lr = self.group_lrs[group]
            t.data = t.data - lr * (m_hat / (np.sqrt(v_hat) + self.eps) + self.wd * t.data)


def make_optimizer(model: TrajPredModel) -> AdamW:
    cfg = model.config
    lrs = {GROUP_PREDICTOR: cfg.lr_predictor,
           GROUP_TRAJECTORY: cfg.lr_trajectory,
           GROUP_TEXT_CONTEXT: cfg.lr_text_context}
    return AdamW(named_parameters(model), lrs, weight_decay=cfg.weight_decay,
                 beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.adam_eps)


def _batch_stream(n: int, batch_size: int, rng: np.random.Generator):
    if batch_size > n:
        raise ValueError(f"batch_size {batch_size} exceeds dataset size {n}")
    while True:
        perm = rng.permutation(n)
        for i in range(0, n - batch_size + 1, batch_size):
            yield perm[i:i + batch_size]


@dataclass
class StageResult:
    stage: int
    steps: int
    losses: list = field(default_factory=list)
    seconds: float = 0.0

    @property
    def final_loss(self) -> float | None:
        return self.losses[-1] if self.losses else None


def active_groups_for_stage(stage: int, use_trajectory: bool) -> set[str]:
    if stage not in (1, 2):
        raise ValueError(f"stage must be 1 or 2, got {stage}")
    active = {GROUP_PREDICTOR, GROUP_TEXT_CONTEXT}
    if stage == 2 and use_trajectory:
        active.add(GROUP_TRAJECTORY)
    return active


def train_stage(model: TrajPredModel, dataset, stage: int, *,
                steps: int | None = None, seed: int | None = None,
                log_path: str | None = None,
                checkpoint_path: str | None = None,
                use_trajectory: bool | None = None,
                optimizer: AdamW | None = None,
                progress=None) -> StageResult:
    """Run one training stage on the dataset's train split.

    ``dataset`` needs: split_ids(split), token_grids(model, split),
    label_matrix(split), tracks(clip_id).  Stage 1 always runs with zero
    trajectory tokens; stage 2 uses them unless disabled.
    """
    cfg = model.config
    if steps is None:
        steps = cfg.steps_per_stage
    if seed is None:
        seed = cfg.seed
    if use_trajectory is None:
        use_trajectory = cfg.use_trajectory
    traj_on = stage == 2 and use_trajectory
    active = active_groups_for_stage(stage, use_trajectory)
    check_freeze_consistency(model)

    ids = dataset.split_ids("train")
    grids = dataset.token_grids(model, "train")
    labels = dataset.label_matrix("train")
    tracks = [dataset.tracks(cid) for cid in ids] if traj_on else None

    opt = optimizer if optimizer is not None else make_optimizer(model)
    rng = seeded_rng(seed, "train-stage", stage)
    stream = _batch_stream(len(ids), cfg.batch_size, rng)

    result = StageResult(stage=stage, steps=steps)
    log = open(log_path, "w", encoding="utf-8") if log_path else None
    if log:
        log.write("step,loss\n")
    t0 = time.monotonic()
    try:
        for step in range(steps):
            batch = next(stream)
            bgrids = [grids[i] for i in batch]
            btracks = [tracks[i] for i in batch] if traj_on else None
            h = forward_batch(model, bgrids, btracks, use_trajectory=traj_on)
            e = class_matrix(model.vocab, model.text, cfg.prompt_mode)
            logits = similarity_logits(h, e, cfg.logit_scale)
            loss = bce_loss(logits, labels[batch])
            opt.zero_grad()
            ndcore.backward(loss)
            opt.step(active)
            value = loss.item()
            result.losses.append(value)
            if log:
                log.write(f"{step},{value:.10f}\n")
            if (checkpoint_path and cfg.checkpoint_every > 0
                    and (step + 1) % cfg.checkpoint_every == 0 and step + 1 < steps):
                save_checkpoint(f"{checkpoint_path}.step{step + 1}", model, stage, step + 1)
            if progress is not None:
                progress(stage, step, value)
    finally:
        if log:
            log.close()
    result.seconds = time.monotonic() - t0
    if checkpoint_path:
        save_checkpoint(checkpoint_path, model, stage, steps)
    return result


def score_split(model: TrajPredModel, dataset, split: str, *,
                use_trajectory: bool | None = None,
                batch_size: int = 32) -> tuple[np.ndarray, np.ndarray]:
    """Score matrix [N, C] and label matrix for one dataset split."""
    cfg = model.config
    if use_trajectory is None:
        use_trajectory = cfg.use_trajectory
    ids = dataset.split_ids(split)
    grids = dataset.token_grids(model, split)
    labels = dataset.label_matrix(split)
    with ndcore.no_grad():
        e = class_matrix(model.vocab, model.text, cfg.prompt_mode)
        rows = []
        for i in range(0, len(ids), batch_size):
            chunk = list(range(i, min(i + batch_size, len(ids))))
            bgrids = [grids[j] for j in chunk]
            btracks = ([dataset.tracks(ids[j]) for j in chunk]
                       if use_trajectory else None)
            h = forward_batch(model, bgrids, btracks, use_trajectory=use_trajectory)
            rows.append(similarity_logits(h, e, cfg.logit_scale).data)
    return np.concatenate(rows, axis=0), labels
