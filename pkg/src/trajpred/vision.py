"""Frozen tubelet visual encoder.

A clip of T frames becomes U = T/2 temporal units; each unit is tiled into
p x p spatial patches, and every (unit, row, col) tubelet -- a p*p*2-frame
pixel block -- is flattened, projected by a frozen seed-initialized matrix
and layer-normalized.  The projection never trains; downstream modules only
need a fixed, informative token map.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ndcore
from .ndcore import Tensor
from .utils import seeded_rng


class FrozenParameterError(RuntimeError):
    """Raised when frozen encoder parameters are marked trainable."""


@dataclass
class VideoClip:
    """T frames of [0,1] pixel data plus the ground-truth triplet set."""
    clip_id: str
    frames: np.ndarray  # [T, H, W, Ch] float64 in [0, 1]
    gt_triplets: frozenset[int] = frozenset()
    fps_tag: str | None = None

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 4:
            raise ValueError(f"clip frames must be [T,H,W,Ch], got {self.frames.shape}")
        self.gt_triplets = frozenset(int(c) for c in self.gt_triplets)


def pad_to_even_frames(frames: np.ndarray) -> np.ndarray:
    """Duplicate the oldest frame when T is odd (7-frame clips become 8)."""
    if frames.shape[0] % 2 == 1:
        return np.concatenate([frames[:1], frames], axis=0)
    return frames


def frame_to_unit(t: int, t_frames: int) -> int:
    """Temporal unit holding frame ``t`` under the stride-2 grouping."""
    if not 0 <= t < t_frames:
        raise IndexError(f"frame index {t} out of range for T={t_frames}")
    return t // 2


@dataclass
class VisionEncoderParams:
    """Frozen projection + layer norm taking flat tubelets to D_v."""
    proj: Tensor
    ln_gain: Tensor
    ln_bias: Tensor
    patch: int
    d_v: int
    channels: int = 3


def init_vision_encoder(d_v: int, patch: int, channels: int = 3,
                        seed: int = 0) -> VisionEncoderParams:
    rng = seeded_rng(seed, "vision_encoder")
    fan_in = 2 * patch * patch * channels
    proj = Tensor(rng.normal(0.0, 1.0 / np.sqrt(fan_in), (fan_in, d_v)))
    return VisionEncoderParams(proj=proj,
                               ln_gain=Tensor(np.ones(d_v)),
                               ln_bias=Tensor(np.zeros(d_v)),
                               patch=patch, d_v=d_v, channels=channels)


@dataclass
class TokenGrid:
    """Spatio-temporal tokens with their grid geometry.

    Token index <-> (u, r, c) is the bijection  i = (u * rows + r) * cols + c.
    """
    tokens: Tensor  # [N_v, D_v]
    t_frames: int
    height: int
    width: int
    patch: int
    units: int
    rows: int
    cols: int
    trailing_trajectory: int = 0  # set by augment(); trailing token count

    @property
    def n_tokens(self) -> int:
        return self.units * self.rows * self.cols

    def token_index(self, u: int, r: int, c: int) -> int:
        if not (0 <= u < self.units and 0 <= r < self.rows and 0 <= c < self.cols):
            raise IndexError(f"(u={u}, r={r}, c={c}) outside grid "
                             f"{self.units}x{self.rows}x{self.cols}")
        return (u * self.rows + r) * self.cols + c

    def token_coords(self, i: int) -> tuple[int, int, int]:
        if not 0 <= i < self.n_tokens:
            raise IndexError(f"token index {i} out of range")
        u, rem = divmod(i, self.rows * self.cols)
        r, c = divmod(rem, self.cols)
        return u, r, c

    def footprint(self, i: int) -> tuple[int, int, int, int]:
        """Pixel rectangle (x0, y0, x1, y1) covered by token ``i``."""
        _, r, c = self.token_coords(i)
        p = self.patch
        return c * p, r * p, (c + 1) * p, (r + 1) * p

    def geometry(self) -> list[dict]:
        recs = []
        for i in range(self.n_tokens):
            u, r, c = self.token_coords(i)
            recs.append({"u": u, "r": r, "c": c, "rect": self.footprint(i)})
        return recs

    def unit_of_tokens(self) -> np.ndarray:
        """Per-token temporal unit index, [N_v]."""
        return np.repeat(np.arange(self.units), self.rows * self.cols)

    def centers(self) -> np.ndarray:
        """Normalized (cx, cy) footprint centers, [N_v, 2]."""
        idx = np.arange(self.n_tokens)
        rem = idx % (self.rows * self.cols)
        r = rem // self.cols
        c = rem % self.cols
        cx = (c + 0.5) * self.patch / self.width
        cy = (r + 0.5) * self.patch / self.height
        return np.stack([cx, cy], axis=1)


def grid_layout(t_frames: int, height: int, width: int, patch: int) -> tuple[int, int, int]:
    """(units, rows, cols) for a clip geometry; pure function of the dims."""
    if t_frames % 2 != 0:
        raise ValueError(f"T={t_frames} must be even (stride-2 temporal units)")
    if height % patch != 0 or width % patch != 0:
        raise ValueError(f"frame {height}x{width} not divisible by patch {patch}")
    return t_frames // 2, height // patch, width // patch


def tubelet_encode(clip: VideoClip, enc: VisionEncoderParams) -> TokenGrid:
    """Encode a clip into its token grid.  ``enc`` must stay frozen."""
    for name in ("proj", "ln_gain", "ln_bias"):
        if getattr(enc, name).requires_grad:
            raise FrozenParameterError(
                f"visual encoder parameter '{name}' was marked trainable")
    frames = clip.frames
    t_frames, height, width, ch = frames.shape
    if ch != enc.channels:
        raise ValueError(f"clip has {ch} channels, encoder expects {enc.channels}")
    units, rows, cols = grid_layout(t_frames, height, width, enc.patch)
    p = enc.patch
    # [U,2,R,p,C,p,Ch] -> [U,R,C, 2,p,p,Ch] -> [N_v, 2*p*p*Ch]
    blocks = frames.reshape(units, 2, rows, p, cols, p, ch)
    blocks = blocks.transpose(0, 2, 4, 1, 3, 5, 6).reshape(units * rows * cols, -1)
    tokens = ndcore.layer_norm(ndcore.matmul(Tensor(blocks), enc.proj),
                               enc.ln_gain, enc.ln_bias)
    return TokenGrid(tokens=tokens, t_frames=t_frames, height=height, width=width,
                     patch=p, units=units, rows=rows, cols=cols)
