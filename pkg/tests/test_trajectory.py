"""Trajectory tokens: box tracks, footprint pooling weights, the sinusoidal
position code, cross-attention pooling, and the token cap."""

import numpy as np
import pytest

from trajpred import ndcore
from trajpred.ndcore import Tensor
from trajpred.trajectory import (
    K_MAX,
    AugmentedSequence,
    BoxTrack,
    TooManyTracksError,
    augment,
    box_token_weights,
    build_trajectory_tokens,
    cross_attn_pool,
    cross_attn_pool_batch,
    init_trajectory_params,
    pool_box_features,
    select_tracks,
    sincos_embed,
)
from trajpred.vision import TokenGrid, grid_layout


def rng_for(name):
    return np.random.default_rng(abs(hash(name)) % 2**32)


def make_grid(d_v=16, seed=0):
    """8-frame 32x32 patch-8 grid with random tokens: 4 units x 4x4 tokens."""
    units, rows, cols = grid_layout(8, 32, 32, 8)
    tokens = Tensor(rng_for(f"grid{seed}").normal(0.0, 1.0, (units * rows * cols, d_v)),
                    requires_grad=True)
    return TokenGrid(tokens=tokens, t_frames=8, height=32, width=32, patch=8,
                     units=units, rows=rows, cols=cols)


# ---------------------------------------------------------------------------
# BoxTrack validation
# ---------------------------------------------------------------------------

def test_box_track_validation():
    ok = BoxTrack(instrument_id=1, boxes=[(0, (0.1, 0.1, 0.3, 0.3)),
                                          (2, (0.2, 0.2, 0.4, 0.4))])
    assert ok.n_frames == 2
    with pytest.raises(ValueError):
        BoxTrack(instrument_id=0, boxes=[])
    with pytest.raises(ValueError):  # frames must strictly increase
        BoxTrack(instrument_id=0, boxes=[(1, (0.1, 0.1, 0.2, 0.2)),
                                         (1, (0.1, 0.1, 0.2, 0.2))])
    with pytest.raises(ValueError):  # x1 < x2 required
        BoxTrack(instrument_id=0, boxes=[(0, (0.5, 0.1, 0.5, 0.2))])
    with pytest.raises(ValueError):  # normalized coordinates only
        BoxTrack(instrument_id=0, boxes=[(0, (0.5, 0.1, 1.2, 0.2))])


# ---------------------------------------------------------------------------
# footprint weights
# ---------------------------------------------------------------------------

def test_box_token_weights_inclusive_centers():
    # centers per axis: 0.125, 0.375, 0.625, 0.875; frame 2 -> unit 1
    grid = make_grid()
    w = box_token_weights(grid, [(2, (0.3, 0.3, 0.7, 0.7))])
    assert w.shape == (1, grid.n_tokens)
    hit = np.flatnonzero(w[0])
    # centers 0.375 and 0.625 on both axes, inside unit 1: rows/cols 1..2
    want = sorted((1 * 4 + r) * 4 + c for r in (1, 2) for c in (1, 2))
    assert sorted(hit) == want
    assert np.allclose(w[0, hit], 0.25)
    # inclusive bounds: box corners exactly on centers keep them
    w2 = box_token_weights(grid, [(0, (0.125, 0.125, 0.375, 0.375))])
    assert np.flatnonzero(w2[0]).size == 4


def test_box_token_weights_fallback_nearest():
    grid = make_grid()
    # tiny box in a corner, no center inside -> nearest center, weight 1
    w = box_token_weights(grid, [(0, (0.01, 0.01, 0.02, 0.02))])
    assert np.flatnonzero(w[0]).tolist() == [0]
    assert w[0, 0] == 1.0
    # equidistant between (0.125, .) and (0.375, .): lowest token index wins
    w3 = box_token_weights(grid, [(0, (0.24, 0.01, 0.26, 0.02))])
    hit = np.flatnonzero(w3[0])
    assert hit.tolist() == [0]


def test_box_token_weights_frame_to_unit():
    grid = make_grid()
    big = (0.0, 0.0, 1.0, 1.0)
    for frame, unit in ((0, 0), (1, 0), (6, 3), (7, 3)):
        w = box_token_weights(grid, [(frame, big)])
        units = np.flatnonzero(w[0]) // 16
        assert set(units) == {unit}
        assert np.flatnonzero(w[0]).size == 16  # all 16 tokens of the unit


def test_pool_box_features_matches_manual_mean():
    grid = make_grid()
    box = (0.3, 0.3, 0.7, 0.7)
    feat = pool_box_features(grid, box, 2)
    w = box_token_weights(grid, [(2, box)])
    want = w[0] @ grid.tokens.data
    np.testing.assert_allclose(feat.data, want, atol=1e-12)


def test_pool_box_features_ignores_outside_tokens():
    # pixels (tokens) outside the selected footprints must not matter
    grid_a = make_grid(seed=1)
    grid_b = make_grid(seed=1)
    box = (0.3, 0.3, 0.7, 0.7)
    w = box_token_weights(grid_a, [(2, box)])
    outside = np.flatnonzero(w[0] == 0)
    grid_b.tokens.data[outside] += 5.0
    fa = pool_box_features(grid_a, box, 2)
    fb = pool_box_features(grid_b, box, 2)
    np.testing.assert_array_equal(fa.data, fb.data)


# ---------------------------------------------------------------------------
# sinusoidal position code
# ---------------------------------------------------------------------------

def test_sincos_embed_formula():
    d_v = 16  # two frequencies: pi, 2*pi
    box = (0.0, 0.5, 0.25, 1.0)
    got = sincos_embed(box, d_v).data
    # coordinate-major segments of interleaved (sin, cos) pairs per octave
    want = []
    for coord in box:
        for j in range(2):
            w = np.pi * 2.0**j
            want.extend([np.sin(w * coord), np.cos(w * coord)])
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_sincos_embed_zero_and_errors():
    got = sincos_embed((0.0, 0.0, 0.0, 0.0), 16).data
    np.testing.assert_allclose(got[0::2], 0.0, atol=1e-15)  # sines
    np.testing.assert_allclose(got[1::2], 1.0, atol=1e-15)  # cosines
    with pytest.raises(ValueError):
        sincos_embed((0.1, 0.1, 0.2, 0.2), 12)
    assert not sincos_embed((0.1, 0.1, 0.2, 0.2), 16).requires_grad


def test_sincos_embed_separates_small_motion():
    # a one-pixel shift in a 32px frame must move the embedding appreciably
    a = sincos_embed((10 / 32, 10 / 32, 15 / 32, 15 / 32), 64).data
    b = sincos_embed((11 / 32, 10 / 32, 16 / 32, 15 / 32), 64).data
    assert np.linalg.norm(a - b) > 0.5


# ---------------------------------------------------------------------------
# cross-attention pooling
# ---------------------------------------------------------------------------

def test_cross_attn_pool_permutation_invariant():
    rng = rng_for("pool")
    params = init_trajectory_params(16, heads=4, depth=2, rng=rng).appearance
    seq = Tensor(rng.normal(0.0, 1.0, (6, 16)))
    out = cross_attn_pool(seq, params)
    perm = rng.permutation(6)
    out_p = cross_attn_pool(Tensor(seq.data[perm]), params)
    np.testing.assert_allclose(out.data, out_p.data, atol=1e-12)


def test_cross_attn_pool_batch_matches_single():
    rng = rng_for("poolbatch")
    params = init_trajectory_params(16, heads=4, depth=2, rng=rng).position
    seqs = rng.normal(0.0, 1.0, (3, 5, 16))
    batched = cross_attn_pool_batch(Tensor(seqs), params)
    for b in range(3):
        single = cross_attn_pool(Tensor(seqs[b]), params)
        np.testing.assert_allclose(batched.data[b], single.data, atol=1e-10)


def test_cross_attn_pool_rejects_empty():
    params = init_trajectory_params(16, heads=4, depth=1,
                                    rng=rng_for("poolerr")).appearance
    with pytest.raises(ValueError):
        cross_attn_pool([], params)


# ---------------------------------------------------------------------------
# trajectory tokens
# ---------------------------------------------------------------------------

def test_trajectory_token_is_sum_of_streams():
    grid = make_grid()
    params = init_trajectory_params(16, heads=4, depth=2, rng=rng_for("tau"))
    track = BoxTrack(instrument_id=2, boxes=[(0, (0.2, 0.2, 0.5, 0.5)),
                                             (3, (0.3, 0.2, 0.6, 0.5)),
                                             (5, (0.4, 0.2, 0.7, 0.5))])
    (tau,) = build_trajectory_tokens(grid, [track], params)
    assert tau.instrument_id == 2
    np.testing.assert_allclose(tau.value.data,
                               tau.appearance.data + tau.position.data, atol=1e-15)
    # streams come from the right pools: appearance from grid tokens,
    # position only from the box coordinates
    app_seq = Tensor(box_token_weights(grid, track.boxes) @ grid.tokens.data)
    np.testing.assert_allclose(tau.appearance.data,
                               cross_attn_pool(app_seq, params.appearance).data,
                               atol=1e-12)
    pos_seq = ndcore.stack([sincos_embed(b, 16) for _, b in track.boxes])
    np.testing.assert_allclose(tau.position.data,
                               cross_attn_pool(pos_seq, params.position).data,
                               atol=1e-12)


def test_stream_independence():
    # perturbing appearance-pool parameters leaves the position stream alone
    grid = make_grid()
    track = BoxTrack(instrument_id=0, boxes=[(0, (0.2, 0.2, 0.5, 0.5))])
    params = init_trajectory_params(16, heads=4, depth=1, rng=rng_for("ind"))
    (before,) = build_trajectory_tokens(grid, [track], params)
    params.appearance.query.data += 1.0
    params.appearance.blocks[0].attn.wq.data += 0.5
    (after,) = build_trajectory_tokens(grid, [track], params)
    np.testing.assert_array_equal(before.position.data, after.position.data)
    assert not np.array_equal(before.appearance.data, after.appearance.data)


def test_too_many_tracks():
    grid = make_grid()
    params = init_trajectory_params(16, heads=4, depth=1, rng=rng_for("cap"))
    tracks = [BoxTrack(instrument_id=i, boxes=[(0, (0.2, 0.2, 0.5, 0.5))])
              for i in range(K_MAX + 1)]
    with pytest.raises(TooManyTracksError):
        build_trajectory_tokens(grid, tracks, params)


def test_select_tracks_ranking():
    def tr(inst, side):
        return BoxTrack(instrument_id=inst, boxes=[(0, (0.1, 0.1, 0.1 + side, 0.1 + side))])

    tracks = [tr(3, 0.2), tr(0, 0.5), tr(1, 0.2), tr(2, 0.4), tr(4, 0.3)]
    kept = select_tracks(tracks, k_max=3)
    # areas: inst0 0.25, inst2 0.16, inst4 0.09, inst3 == inst1 0.04
    assert [t.instrument_id for t in kept] == [0, 2, 4]  # original order kept
    kept4 = select_tracks(tracks, k_max=4)
    # tie at 0.04 broken by lower instrument id -> inst1 joins
    assert [t.instrument_id for t in kept4] == [0, 1, 2, 4]
    assert select_tracks(tracks[:2], k_max=4) == tracks[:2]


def test_augment_shape_law():
    grid = make_grid()
    params = init_trajectory_params(16, heads=4, depth=1, rng=rng_for("aug"))
    for k in range(K_MAX + 1):
        tracks = [BoxTrack(instrument_id=i, boxes=[(0, (0.2, 0.2, 0.5, 0.5))])
                  for i in range(k)]
        taus = build_trajectory_tokens(grid, tracks, params)
        aug = augment(grid, taus)
        assert isinstance(aug, AugmentedSequence)
        assert aug.tokens.shape == (grid.n_tokens + k, 16)
        assert (aug.n_grid, aug.n_trajectory) == (grid.n_tokens, k)
        if k:
            np.testing.assert_array_equal(aug.tokens.data[grid.n_tokens + k - 1],
                                          taus[k - 1].value.data)


def test_augment_rejects_overfull():
    grid = make_grid()
    params = init_trajectory_params(16, heads=4, depth=1, rng=rng_for("aug2"))
    track = BoxTrack(instrument_id=0, boxes=[(0, (0.2, 0.2, 0.5, 0.5))])
    (tau,) = build_trajectory_tokens(grid, [track], params)
    with pytest.raises(TooManyTracksError):
        augment(grid, [tau] * (K_MAX + 1))
