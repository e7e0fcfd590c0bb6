"""Frozen tubelet encoder: grid geometry, locality, and the freeze guard."""

import numpy as np
import pytest

from trajpred.vision import (
    FrozenParameterError,
    TokenGrid,
    VideoClip,
    frame_to_unit,
    grid_layout,
    init_vision_encoder,
    pad_to_even_frames,
    tubelet_encode,
)


def make_clip(seed=0, t=8, h=32, w=32, ch=3):
    rng = np.random.default_rng(seed)
    return VideoClip(clip_id=f"clip{seed}", frames=rng.random((t, h, w, ch)))


def test_grid_layout_counts():
    assert grid_layout(8, 32, 32, 8) == (4, 4, 4)
    assert grid_layout(6, 16, 24, 8) == (3, 2, 3)
    with pytest.raises(ValueError):
        grid_layout(7, 32, 32, 8)  # odd T
    with pytest.raises(ValueError):
        grid_layout(8, 30, 32, 8)  # height not divisible


def test_pad_to_even_frames_duplicates_oldest():
    frames = np.arange(7 * 2 * 2 * 1, dtype=float).reshape(7, 2, 2, 1)
    out = pad_to_even_frames(frames)
    assert out.shape[0] == 8
    np.testing.assert_array_equal(out[0], out[1])
    np.testing.assert_array_equal(out[1:], frames)
    even = np.zeros((4, 2, 2, 1))
    assert pad_to_even_frames(even) is even


def test_frame_to_unit_stride_two():
    assert [frame_to_unit(t, 8) for t in range(8)] == [0, 0, 1, 1, 2, 2, 3, 3]
    with pytest.raises(IndexError):
        frame_to_unit(8, 8)


def test_token_index_coords_roundtrip_and_footprints_tile():
    clip = make_clip()
    enc = init_vision_encoder(16, 8)
    grid = tubelet_encode(clip, enc)
    assert (grid.units, grid.rows, grid.cols) == (4, 4, 4)
    covered = np.zeros((4, 32, 32), dtype=int)
    for i in range(grid.n_tokens):
        u, r, c = grid.token_coords(i)
        assert grid.token_index(u, r, c) == i
        x0, y0, x1, y1 = grid.footprint(i)
        covered[u, y0:y1, x0:x1] += 1
    # footprints tile each temporal unit with no overlap
    assert np.all(covered == 1)
    with pytest.raises(IndexError):
        grid.token_index(4, 0, 0)
    with pytest.raises(IndexError):
        grid.token_coords(grid.n_tokens)


def test_centers_and_units():
    grid = tubelet_encode(make_clip(), init_vision_encoder(16, 8))
    centers = grid.centers()
    assert centers.shape == (64, 2)
    # first row of tokens: centers at x = (c + 0.5) * 8 / 32
    np.testing.assert_allclose(centers[:4, 0], [0.125, 0.375, 0.625, 0.875])
    np.testing.assert_allclose(centers[:4, 1], 0.125)
    units = grid.unit_of_tokens()
    assert units.shape == (64,)
    assert list(units[:16]) == [0] * 16 and units[-1] == 3


def test_encode_shapes_and_determinism():
    clip = make_clip(3)
    enc1 = init_vision_encoder(24, 8, seed=5)
    enc2 = init_vision_encoder(24, 8, seed=5)
    g1 = tubelet_encode(clip, enc1)
    g2 = tubelet_encode(clip, enc2)
    assert g1.tokens.shape == (64, 24)
    np.testing.assert_array_equal(g1.tokens.data, g2.tokens.data)
    enc3 = init_vision_encoder(24, 8, seed=6)
    assert not np.array_equal(g1.tokens.data,
                              tubelet_encode(clip, enc3).tokens.data)


def test_tokens_are_layer_normalized():
    grid = tubelet_encode(make_clip(4), init_vision_encoder(32, 8))
    toks = grid.tokens.data
    np.testing.assert_allclose(toks.mean(axis=1), 0.0, atol=1e-10)
    np.testing.assert_allclose(toks.var(axis=1), 1.0, atol=1e-3)


def test_locality_one_footprint_one_token():
    clip = make_clip(7)
    enc = init_vision_encoder(16, 8)
    base = tubelet_encode(clip, enc).tokens.data
    grid = tubelet_encode(clip, enc)
    target = grid.token_index(2, 1, 3)
    x0, y0, x1, y1 = grid.footprint(target)
    frames = clip.frames.copy()
    frames[4:6, y0:y1, x0:x1] += 0.25  # both frames of unit 2, inside one patch
    bumped = tubelet_encode(VideoClip("bump", frames), enc).tokens.data
    changed = np.flatnonzero(np.abs(bumped - base).max(axis=1) > 1e-12)
    assert list(changed) == [target]


def test_frozen_guard():
    clip = make_clip(1)
    enc = init_vision_encoder(16, 8)
    enc.proj.requires_grad = True
    with pytest.raises(FrozenParameterError):
        tubelet_encode(clip, enc)


def test_channel_mismatch_error():
    enc = init_vision_encoder(16, 8, channels=3)
    bad = VideoClip("gray", np.zeros((8, 32, 32, 1)))
    with pytest.raises(ValueError):
        tubelet_encode(bad, enc)


def test_clip_shape_validation():
    with pytest.raises(ValueError):
        VideoClip("flat", np.zeros((8, 32, 32)))
