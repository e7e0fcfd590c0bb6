"""Similarity heatmaps: cosine of each predicted token embedding against one
class embedding, laid out on the token grid per temporal unit, upsampled to
frame size, and overlaid on the unit's second frame."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import ndcore
from .data_io import save_matrix
from .metrics import rank_order
from .model import TrajPredModel, encode_clip, forward_single
from .ndcore import Tensor
from .predictor import pool_project
from .text import class_matrix, prompt_text
from .trajectory import BoxTrack, select_tracks
from .utils import canonical_json
from .vision import VideoClip


def bilinear_upsample(grid: np.ndarray, height: int, width: int) -> np.ndarray:
    """Corner-aligned bilinear interpolation of [R, C] onto [height, width].

    Output corners equal input corners; a 1-wide axis broadcasts.  Values
    are convex combinations, so output extrema never exceed input extrema.
    """
    grid = np.asarray(grid, dtype=np.float64)
    r, c = grid.shape
    ys = np.zeros(height) if r == 1 else np.arange(height) * (r - 1) / (height - 1)
    xs = np.zeros(width) if c == 1 else np.arange(width) * (c - 1) / (width - 1)
    y0 = np.minimum(ys.astype(int), r - 2 if r > 1 else 0)
    x0 = np.minimum(xs.astype(int), c - 2 if c > 1 else 0)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    y1 = np.minimum(y0 + 1, r - 1)
    x1 = np.minimum(x0 + 1, c - 1)
    top = grid[np.ix_(y0, x0)] * (1 - fx) + grid[np.ix_(y0, x1)] * fx
    bot = grid[np.ix_(y1, x0)] * (1 - fx) + grid[np.ix_(y1, x1)] * fx
    return top * (1 - fy) + bot * fy


@dataclass
class HeatmapResult:
    unit_grids: np.ndarray        # [U, R, C] raw cosine values in [-1, 1]
    upsampled: np.ndarray         # [U, H, W]
    trajectory_similarities: list
    query_similarities: list
    top5: list                    # [{"class_id", "triplet", "score"}]
    class_id: int
    missing_boxes: bool


def compute_heatmaps(model: TrajPredModel, clip: VideoClip,
                     tracks: list[BoxTrack] | None, class_id: int,
                     use_trajectory: bool | None = None) -> HeatmapResult:
    vocab = model.vocab
    if not 0 <= class_id < vocab.n_classes:
        raise IndexError(f"class id {class_id} out of range 0..{vocab.n_classes - 1}")
    if use_trajectory is None:
        use_trajectory = model.config.use_trajectory
    missing = use_trajectory and not tracks
    with ndcore.no_grad():
        grid = encode_clip(model, clip)
        kept = select_tracks(tracks or [], model.config.k_max) if use_trajectory else []
        outputs, aug = forward_single(model, grid, kept, use_trajectory=use_trajectory)
        embeds = ndcore.matmul(outputs, model.pred.w_out)          # [N', D_t]
        e_all = class_matrix(vocab, model.text, model.config.prompt_mode)
        sims = ndcore.cosine_matrix(embeds, e_all).data            # [N', C]
        sim_y = sims[:, class_id]
        h = pool_project(outputs, model.pred)
        scores = model.config.logit_scale * ndcore.cosine_matrix(
            ndcore.reshape(h, (1, h.shape[0])), e_all).data[0]

    units, rows, cols = grid.units, grid.rows, grid.cols
    unit_grids = sim_y[: grid.n_tokens].reshape(units, rows, cols)
    upsampled = np.stack([bilinear_upsample(unit_grids[u], clip.frames.shape[1],
                                            clip.frames.shape[2])
                          for u in range(units)])
    k = aug.n_trajectory
    traj_sims = [float(v) for v in sim_y[grid.n_tokens: grid.n_tokens + k]]
    query_sims = [float(v) for v in sim_y[grid.n_tokens + k:]]
    top5 = [{"class_id": int(c),
             "triplet": list(vocab.triplet_names(int(c))),
             "score": float(scores[c])}
            for c in rank_order(scores)[:5]]
    return HeatmapResult(unit_grids=unit_grids, upsampled=upsampled,
                         trajectory_similarities=traj_sims,
                         query_similarities=query_sims, top5=top5,
                         class_id=class_id, missing_boxes=missing)


def overlay_image(frame: np.ndarray, values: np.ndarray) -> np.ndarray:
    """uint8 overlay: grayscale base, positive similarity added to red."""
    gray = frame.mean(axis=-1)
    pos = np.clip(values, 0.0, 1.0)
    img = np.stack([np.clip(gray + pos, 0.0, 1.0), gray, gray], axis=-1)
    return np.round(img * 255.0).astype(np.uint8)


def write_ppm(path: str | Path, img: np.ndarray) -> None:
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise ValueError(f"PPM writer needs uint8 [H, W, 3], got {img.shape} {img.dtype}")
    h, w = img.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(img.tobytes())


def save_heatmaps(out_dir: str | Path, model: TrajPredModel, clip: VideoClip,
                  tracks: list[BoxTrack] | None, class_id: int,
                  use_trajectory: bool | None = None) -> dict:
    """Write per-unit grids (.f32 + shape sidecar), overlays (.ppm), and a
    JSON sidecar; returns the sidecar dict."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = compute_heatmaps(model, clip, tracks, class_id, use_trajectory)
    units = result.upsampled.shape[0]
    for u in range(units):
        save_matrix(out_dir / f"unit{u}_grid", result.upsampled[u])
        t_overlay = min(2 * u + 1, clip.frames.shape[0] - 1)
        write_ppm(out_dir / f"unit{u}_overlay.ppm",
                  overlay_image(clip.frames[t_overlay], result.upsampled[u]))
    sidecar = {
        "clip_id": clip.clip_id,
        "class_id": result.class_id,
        "triplet": list(model.vocab.triplet_names(result.class_id)),
        "prompt": prompt_text(model.vocab, model.vocab.valid_triplets[result.class_id],
                              model.config.prompt_mode),
        "config_digest": model.config.digest(),
        "units": units,
        "grid_rows": result.unit_grids.shape[1],
        "grid_cols": result.unit_grids.shape[2],
        "missing_boxes": result.missing_boxes,
        "trajectory_token_similarities": result.trajectory_similarities,
        "query_token_similarities": result.query_similarities,
        "top5": result.top5,
        "raw_unit_grids": [g.tolist() for g in result.unit_grids],
    }
    (out_dir / "heatmap.json").write_text(canonical_json(sidecar) + "\n",
                                          encoding="utf-8")
    return sidecar
