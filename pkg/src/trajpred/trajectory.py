"""Trajectory tokens: one D_v vector per detected instrument.

Two streams feed each token.  The appearance stream mean-pools grid tokens
whose footprint centers fall inside the instrument's per-frame bounding box;
the position stream embeds the raw box coordinates with fixed sine/cosine
frequencies.  Each stream is compressed over time by its own two-layer,
eight-head cross-attention pool with a single learnable query, and the two
pooled vectors are summed element-wise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ndcore
from .layers import CrossAttnBlockParams, cross_attn_block, init_cross_attn_block
from .ndcore import Tensor
from .vision import TokenGrid, frame_to_unit

K_MAX = 4  # at most four trajectory tokens per clip


class TooManyTracksError(ValueError):
    """More tracks than trajectory-token slots; caller must pre-filter."""


@dataclass
class BoxTrack:
    """Per-instrument sequence of normalized boxes over frames."""
    instrument_id: int
    boxes: list[tuple[int, tuple[float, float, float, float]]]  # (frame, (x1,y1,x2,y2))

    def __post_init__(self):
        if not self.boxes:
            raise ValueError("a box track needs at least one box")
        prev = -1
        for t, (x1, y1, x2, y2) in self.boxes:
            if t <= prev:
                raise ValueError(f"track frames must be strictly increasing, got {t} after {prev}")
            prev = t
            if not (0.0 <= x1 < x2 <= 1.0 and 0.0 <= y1 < y2 <= 1.0):
                raise ValueError(f"invalid normalized box {(x1, y1, x2, y2)} at frame {t}")

    @property
    def n_frames(self) -> int:
        return len(self.boxes)


@dataclass
class TrajectoryToken:
    value: Tensor       # [D_v], appearance + position
    instrument_id: int
    appearance: Tensor  # pooled appearance stream, kept for tests
    position: Tensor    # pooled position stream, kept for tests


@dataclass
class CrossAttnPoolParams:
    """Single learnable query plus a stack of cross-attention blocks."""
    query: Tensor  # [D_v]
    blocks: list[CrossAttnBlockParams]


def init_cross_attn_pool(d: int, heads: int, depth: int,
                         rng: np.random.Generator) -> CrossAttnPoolParams:
    query = Tensor(rng.normal(0.0, 0.02, d), requires_grad=True)
    blocks = [init_cross_attn_block(d, heads, rng) for _ in range(depth)]
    return CrossAttnPoolParams(query=query, blocks=blocks)


@dataclass
class TrajectoryParams:
    """Appearance and position pools; the two instances share no parameters."""
    appearance: CrossAttnPoolParams
    position: CrossAttnPoolParams


def init_trajectory_params(d_v: int, heads: int = 8, depth: int = 2,
                           rng: np.random.Generator | None = None) -> TrajectoryParams:
    rng = rng if rng is not None else np.random.default_rng(0)
    return TrajectoryParams(appearance=init_cross_attn_pool(d_v, heads, depth, rng),
                            position=init_cross_attn_pool(d_v, heads, depth, rng))


# ---------------------------------------------------------------------------
# appearance stream
# ---------------------------------------------------------------------------

def box_token_weights(grid: TokenGrid,
                      items: list[tuple[int, tuple[float, float, float, float]]]) -> np.ndarray:
    """Mean-pool weight matrix [len(items), N_v] for (frame, box) pairs.

    A token participates when its footprint center lies inside the box
    (inclusive bounds) and it belongs to the frame's temporal unit.  When no
    center falls inside, the unit token whose center is nearest the box
    center is used alone (ties resolved by lowest token index).
    """
    centers = grid.centers()
    unit_ids = grid.unit_of_tokens()
    weights = np.zeros((len(items), grid.n_tokens))
    for j, (t, box) in enumerate(items):
        u = frame_to_unit(t, grid.t_frames)
        in_unit = unit_ids == u
        x1, y1, x2, y2 = box
        inside = (in_unit
                  & (centers[:, 0] >= x1) & (centers[:, 0] <= x2)
                  & (centers[:, 1] >= y1) & (centers[:, 1] <= y2))
        if inside.any():
            weights[j, inside] = 1.0 / inside.sum()
        else:
            bx, by = (x1 + x2) / 2.0, (y1 + y2) / 2.0
            d2 = (centers[:, 0] - bx) ** 2 + (centers[:, 1] - by) ** 2
            d2 = np.where(in_unit, d2, np.inf)
            weights[j, int(np.argmin(d2))] = 1.0
    return weights


def pool_box_features(grid: TokenGrid, box: tuple[float, float, float, float],
                      t: int) -> Tensor:
    """Mean of the frame's unit tokens whose footprint centers lie in ``box``."""
    w = box_token_weights(grid, [(t, box)])
    return ndcore.reshape(ndcore.matmul(Tensor(w), grid.tokens), (grid.tokens.shape[1],))


# ---------------------------------------------------------------------------
# position stream
# ---------------------------------------------------------------------------

def sincos_embed(box: tuple[float, float, float, float], d_v: int) -> Tensor:
    """Fixed sinusoidal embedding of the 4 box coordinates into D_v dims.

    Each coordinate owns D_v/4 dims laid out as interleaved
    sin(w_j x), cos(w_j x) with w_j = pi * 2^j.  Coordinates live in [0, 1],
    so the octave ladder spans whole-frame drift down to sub-pixel wiggle and
    keeps small box motions visible in the embedding.  Deterministic and
    gradient-free: positions enter the model as constants.
    """
    if d_v % 8 != 0:
        raise ValueError(f"sincos_embed needs D_v divisible by 8, got {d_v}")
    n_freq = d_v // 8
    omega = np.pi * 2.0 ** np.arange(n_freq)
    out = np.empty(d_v)
    for i, coord in enumerate(box):
        ang = coord * omega
        seg = out[i * 2 * n_freq:(i + 1) * 2 * n_freq]
        seg[0::2] = np.sin(ang)
        seg[1::2] = np.cos(ang)
    return Tensor(out)


# ---------------------------------------------------------------------------
# cross-attention pooling and fusion
# ---------------------------------------------------------------------------

def cross_attn_pool_batch(seqs: Tensor, params: CrossAttnPoolParams) -> Tensor:
    """Pool a batch of sequences [B, L, D] into [B, D]."""
    b, _, d = seqs.shape
    q = ndcore.expand_leading(ndcore.reshape(params.query, (1, d)), b)  # [B, 1, D]
    for block in params.blocks:
        q = cross_attn_block(q, seqs, block)
    return ndcore.reshape(q, (b, d))


def cross_attn_pool(seq: list[Tensor] | Tensor, params: CrossAttnPoolParams) -> Tensor:
    """Compress a sequence of D_v vectors into one D_v vector.

    Permutation-invariant over the sequence: no positional encoding is
    applied inside the pool.
    """
    if isinstance(seq, Tensor):
        stacked = seq
    else:
        if len(seq) == 0:
            raise ValueError("cross_attn_pool needs a non-empty sequence")
        stacked = ndcore.stack(list(seq))
    if stacked.ndim != 2 or stacked.shape[0] == 0:
        raise ValueError(f"cross_attn_pool expects [L, D] with L >= 1, got {stacked.shape}")
    batched = ndcore.reshape(stacked, (1,) + stacked.shape)
    return ndcore.reshape(cross_attn_pool_batch(batched, params), (stacked.shape[1],))


def build_trajectory_tokens(grid: TokenGrid, tracks: list[BoxTrack],
                            params: TrajectoryParams) -> list[TrajectoryToken]:
    """One trajectory token per track: tau = pooled appearance + pooled position."""
    if len(tracks) > K_MAX:
        raise TooManyTracksError(
            f"{len(tracks)} tracks exceed the {K_MAX}-token cap; pre-filter with select_tracks")
    d_v = grid.tokens.shape[1]
    out = []
    for track in tracks:
        app_w = box_token_weights(grid, track.boxes)
        app_seq = ndcore.matmul(Tensor(app_w), grid.tokens)          # [T_k, D_v]
        pos_seq = ndcore.stack([sincos_embed(b, d_v) for _, b in track.boxes])
        a_bar = cross_attn_pool(app_seq, params.appearance)
        p_bar = cross_attn_pool(pos_seq, params.position)
        out.append(TrajectoryToken(value=ndcore.add(a_bar, p_bar),
                                   instrument_id=track.instrument_id,
                                   appearance=a_bar, position=p_bar))
    return out


def select_tracks(tracks: list[BoxTrack], k_max: int = K_MAX) -> list[BoxTrack]:
    """Keep the k_max tracks with greatest summed box area, ties broken by
    lower instrument_id; original ordering is preserved among the kept."""
    if len(tracks) <= k_max:
        return list(tracks)

    def area(track: BoxTrack) -> float:
        return sum((x2 - x1) * (y2 - y1) for _, (x1, y1, x2, y2) in track.boxes)

    ranked = sorted(tracks, key=lambda tr: (-area(tr), tr.instrument_id))
    keep = {id(tr) for tr in ranked[:k_max]}
    return [tr for tr in tracks if id(tr) in keep]


@dataclass
class AugmentedSequence:
    """Grid tokens with trajectory tokens appended; trailing indices
    [n_grid, n_grid + n_trajectory) are the trajectory tokens."""
    tokens: Tensor
    n_grid: int
    n_trajectory: int


def augment(grid: TokenGrid, taus: list[TrajectoryToken]) -> AugmentedSequence:
    """Z_aug = [Z_v ; tau_1 ... tau_K] in track order."""
    if len(taus) > K_MAX:
        raise TooManyTracksError(f"{len(taus)} trajectory tokens exceed the {K_MAX} cap")
    if not taus:
        return AugmentedSequence(tokens=grid.tokens, n_grid=grid.n_tokens, n_trajectory=0)
    d_v = grid.tokens.shape[1]
    rows = [grid.tokens] + [ndcore.reshape(t.value, (1, d_v)) for t in taus]
    return AugmentedSequence(tokens=ndcore.concat(rows, axis=0),
                             n_grid=grid.n_tokens, n_trajectory=len(taus))
