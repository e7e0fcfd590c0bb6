"""File formats and the dataset directory reader."""

import json

import numpy as np
import pytest

from trajpred.data_io import (
    Dataset,
    DatasetError,
    load_matrix,
    read_box_records,
    read_clip_frames,
    read_manifest,
    save_matrix,
    write_box_records,
    write_clip_frames,
    write_manifest,
)
from trajpred.synthdata import SceneSpec, build_dataset, default_vocabulary
from trajpred.trajectory import BoxTrack


@pytest.fixture(scope="module")
def ds_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("dsio") / "ds"
    build_dataset(root, seed=7, sizes={"train": 12, "test": 6, "unseen_test": 3},
                  spec=SceneSpec(), vocab=default_vocabulary(),
                  held_out_verbs=["sweep"])
    return root


def test_clip_frames_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    frames = rng.random((4, 8, 8, 3))
    path = tmp_path / "c.f32"
    write_clip_frames(path, frames)
    assert path.stat().st_size == 4 * 8 * 8 * 3 * 4
    back = read_clip_frames(path, 4, 8, 8, 3)
    np.testing.assert_array_equal(back, frames.astype("<f4").astype(np.float64))


def test_clip_frames_size_validation(tmp_path):
    path = tmp_path / "c.f32"
    path.write_bytes(b"\x00" * 100)
    with pytest.raises(DatasetError, match="expected"):
        read_clip_frames(path, 4, 8, 8, 3)


def test_matrix_round_trip(tmp_path):
    arr = np.linspace(-2, 2, 24).reshape(4, 6)
    save_matrix(tmp_path / "m", arr)
    back = load_matrix(tmp_path / "m")
    np.testing.assert_array_equal(back, arr.astype("<f4").astype(np.float64))
    side = json.loads((tmp_path / "m.json").read_text())
    assert side == {"dtype": "<f4", "shape": [4, 6]}


def test_matrix_sidecar_mismatch(tmp_path):
    save_matrix(tmp_path / "m", np.zeros((2, 2)))
    (tmp_path / "m.f32").write_bytes(b"\x00" * 8)  # too short for 2x2
    with pytest.raises(DatasetError, match="sidecar"):
        load_matrix(tmp_path / "m")


def test_box_records_round_trip_and_grouping(tmp_path):
    tracks = {
        "clip_b": [BoxTrack(3, [(0, (0.1, 0.1, 0.3, 0.3)), (2, (0.2, 0.1, 0.4, 0.3))]),
                   BoxTrack(1, [(1, (0.5, 0.5, 0.7, 0.8))])],
        "clip_a": [BoxTrack(0, [(0, (0.25, 0.25, 0.5, 0.5))])],
    }
    path = tmp_path / "boxes.jsonl"
    write_box_records(path, tracks)
    back = read_box_records(path)
    assert set(back) == {"clip_a", "clip_b"}
    # tracks come back ordered by instrument id, boxes by frame
    assert [tr.instrument_id for tr in back["clip_b"]] == [1, 3]
    got = back["clip_b"][1]
    assert got.boxes == tracks["clip_b"][0].boxes
    assert back["clip_a"][0].boxes == tracks["clip_a"][0].boxes


def test_box_records_reject_bad_json(tmp_path):
    path = tmp_path / "boxes.jsonl"
    path.write_text('{"clip_id": "x", "instrument_id": 0,\n')
    with pytest.raises(DatasetError, match="bad JSON"):
        read_box_records(path)


def test_manifest_round_trip_and_errors(tmp_path):
    m = {"format_version": 1, "clips": [], "zeta": [1, 2]}
    write_manifest(tmp_path / "manifest.json", m)
    assert read_manifest(tmp_path / "manifest.json") == m
    with pytest.raises(DatasetError, match="cannot read"):
        read_manifest(tmp_path / "absent.json")
    (tmp_path / "broken.json").write_text("{nope")
    with pytest.raises(DatasetError, match="JSON"):
        read_manifest(tmp_path / "broken.json")


# -- Dataset directory reader -------------------------------------------------

def test_dataset_splits_and_sizes(ds_root):
    ds = Dataset(ds_root)
    assert len(ds.split_ids("train")) == 12
    assert len(ds.split_ids("test")) == 6
    assert len(ds.split_ids("unseen_test")) == 3
    with pytest.raises(DatasetError, match="unknown split"):
        ds.split_ids("validation")


def test_dataset_clip_access(ds_root):
    ds = Dataset(ds_root)
    cid = ds.split_ids("test")[0]
    clip = ds.clip(cid)
    sc = ds.scene
    assert clip.frames.shape == (sc["t_frames"], sc["height"], sc["width"],
                                 sc["channels"])
    assert clip.frames.min() >= 0.0 and clip.frames.max() <= 1.0
    assert clip.gt_triplets  # every clip carries at least one class id
    with pytest.raises(DatasetError, match="unknown clip"):
        ds.clip("missing_00000")


def test_dataset_label_matrix_matches_records(ds_root):
    ds = Dataset(ds_root)
    y = ds.label_matrix("train")
    assert y.shape == (12, ds.vocab.n_classes)
    assert set(np.unique(y)) <= {0, 1}
    row_counts = y.sum(axis=1)
    assert ((row_counts >= 1) & (row_counts <= 2)).all()
    for n, cid in enumerate(ds.split_ids("train")):
        assert set(np.flatnonzero(y[n])) == set(ds.clip(cid).gt_triplets)


def test_dataset_tracks_align_with_triplets(ds_root):
    ds = Dataset(ds_root)
    for cid in ds.split_ids("test"):
        tracks = ds.tracks(cid)
        gt_insts = {ds.vocab.valid_triplets[c][0] for c in ds.clip(cid).gt_triplets}
        assert {tr.instrument_id for tr in tracks} == gt_insts


def test_dataset_content_hashes_present(ds_root):
    ds = Dataset(ds_root)
    for rec in ds.manifest["clips"]:
        assert len(rec["content"]) == 16
    assert "digest" in ds.manifest


def test_frame0_features(ds_root):
    ds = Dataset(ds_root)
    feats, verbs = ds.frame0_features("train")
    sc = ds.scene
    assert feats.shape == (12, sc["height"] * sc["width"] * sc["channels"])
    assert len(verbs) == 12
    for vlist in verbs:
        assert 1 <= len(vlist) <= 2
        assert all(0 <= v < len(ds.vocab.verbs) for v in vlist)


def test_token_grid_cache_tracks_encoder_weights(ds_root):
    from trajpred.config import RunConfig
    from trajpred.model import build_model

    ds = Dataset(ds_root)
    cfg = RunConfig(d_v=16, d_t=16, pred_depth=1, pred_heads=2, n_query=2,
                    pool_depth=1, pool_heads=2, txt_depth=1, txt_heads=2,
                    m_context=2)
    model = build_model(cfg, ds.vocab)
    grids = ds.token_grids(model, "test")
    assert grids is ds.token_grids(model, "test")  # cache hit
    model.vision.proj.data = model.vision.proj.data * 1.5
    assert grids is not ds.token_grids(model, "test")  # weights changed
