"""Checkpoint container: byte format, digests, round trips, model restore."""

import json
import struct

import numpy as np
import pytest

from trajpred.checkpoint import (
    MAGIC,
    CheckpointError,
    checkpoint_bytes,
    load_checkpoint,
    load_into,
    restore_model,
    save_checkpoint,
)
from trajpred.config import RunConfig
from trajpred.model import build_model, named_parameters
from trajpred.synthdata import default_vocabulary


@pytest.fixture()
def small_model():
    cfg = RunConfig(d_v=16, d_t=16, pred_depth=1, pred_heads=2, n_query=2,
                    pool_depth=1, pool_heads=2, txt_depth=1, txt_heads=2,
                    m_context=2, seed=5)
    return build_model(cfg, default_vocabulary())


def test_round_trip_preserves_everything(small_model, tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, small_model, stage=2, step=17)
    back = load_checkpoint(path)
    assert back.stage == 2 and back.step == 17
    assert back.config.digest() == small_model.config.digest()
    assert back.vocab.digest() == small_model.vocab.digest()
    named = named_parameters(small_model)
    assert set(back.tensors) == set(named)
    for name, t in named.items():
        got = back.tensors[name]
        assert got.dtype == np.dtype("<f4")
        np.testing.assert_array_equal(got, t.data.astype("<f4"), err_msg=name)
        assert back.trainable[name] == t.requires_grad


def test_resave_is_byte_identical(small_model, tmp_path):
    first = checkpoint_bytes(small_model, stage=1, step=9)
    path = tmp_path / "m.ckpt"
    path.write_bytes(first)
    twin = restore_model(load_checkpoint(path))
    assert checkpoint_bytes(twin, stage=1, step=9) == first


def test_file_starts_with_magic(small_model):
    assert checkpoint_bytes(small_model, 1, 0).startswith(MAGIC)


def test_bad_magic_rejected(small_model, tmp_path):
    blob = checkpoint_bytes(small_model, 1, 0)
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOTAMODEL" + blob[len(MAGIC):])
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)


def test_missing_file_rejected(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "nope.ckpt")


def test_truncated_payload_rejected(small_model, tmp_path):
    blob = checkpoint_bytes(small_model, 1, 0)
    path = tmp_path / "cut.ckpt"
    path.write_bytes(blob[: len(blob) - 8])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(path)


def test_truncated_header_rejected(small_model, tmp_path):
    blob = checkpoint_bytes(small_model, 1, 0)
    path = tmp_path / "cut.ckpt"
    path.write_bytes(blob[: len(MAGIC) + 4])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_garbage_header_rejected(small_model, tmp_path):
    blob = checkpoint_bytes(small_model, 1, 0)
    hlen = struct.unpack("<Q", blob[len(MAGIC): len(MAGIC) + 8])[0]
    start = len(MAGIC) + 8
    path = tmp_path / "junk.ckpt"
    path.write_bytes(blob[:start] + b"\xff" * hlen + blob[start + hlen:])
    with pytest.raises(CheckpointError, match="header"):
        load_checkpoint(path)


def _tamper_header(blob, mutate):
    start = len(MAGIC) + 8
    hlen = struct.unpack("<Q", blob[len(MAGIC):start])[0]
    header = json.loads(blob[start:start + hlen].decode())
    mutate(header)
    raw = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return blob[:len(MAGIC)] + struct.pack("<Q", len(raw)) + raw + blob[start + hlen:]


def test_format_version_mismatch_rejected(small_model, tmp_path):
    blob = checkpoint_bytes(small_model, 1, 0)
    path = tmp_path / "v9.ckpt"
    path.write_bytes(_tamper_header(blob, lambda h: h.update(format_version=9)))
    with pytest.raises(CheckpointError, match="format_version"):
        load_checkpoint(path)


def test_config_digest_guard(small_model, tmp_path):
    blob = checkpoint_bytes(small_model, 1, 0)

    def mutate(h):
        h["config"]["seed"] = 999  # still a valid config, digest now stale
    path = tmp_path / "cfg.ckpt"
    path.write_bytes(_tamper_header(blob, mutate))
    with pytest.raises(CheckpointError, match="config digest"):
        load_checkpoint(path)


def test_vocab_digest_guard(small_model, tmp_path):
    blob = checkpoint_bytes(small_model, 1, 0)

    def mutate(h):
        h["vocab"]["targets"][0] = "ruby_pad"  # valid vocabulary, stale digest
    path = tmp_path / "voc.ckpt"
    path.write_bytes(_tamper_header(blob, mutate))
    with pytest.raises(CheckpointError, match="digest"):
        load_checkpoint(path)


def test_load_into_rejects_name_mismatch(small_model, tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, small_model, 1, 0)
    ck = load_checkpoint(path)
    del ck.tensors["pred.w_out"]
    del ck.trainable["pred.w_out"]
    with pytest.raises(CheckpointError, match="name mismatch"):
        load_into(small_model, ck)


def test_load_into_rejects_shape_mismatch(small_model, tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, small_model, 1, 0)
    ck = load_checkpoint(path)
    ck.tensors["pred.w_out"] = np.zeros((3, 3), dtype="<f4")
    with pytest.raises(CheckpointError, match="shape"):
        load_into(small_model, ck)


def test_load_into_clears_grads_and_restores_flags(small_model, tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, small_model, 1, 0)
    ck = load_checkpoint(path)
    w = small_model.pred.w_out
    w.grad = np.ones(w.shape)
    w.requires_grad = False
    load_into(small_model, ck)
    assert w.grad is None
    assert w.requires_grad is True  # flag comes back from the file


def test_restore_model_matches_source(small_model, tmp_path):
    # scribble on a tensor so restore has something nontrivial to recover
    small_model.pred.w_out.data = small_model.pred.w_out.data + 0.25
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, small_model, stage=1, step=3)
    twin = restore_model(load_checkpoint(path))
    src, dst = named_parameters(small_model), named_parameters(twin)
    assert set(src) == set(dst)
    for name in src:
        np.testing.assert_array_equal(
            dst[name].data, src[name].data.astype("<f4").astype(np.float64),
            err_msg=name)
        assert dst[name].requires_grad == src[name].requires_grad
        assert dst[name].grad is None
    assert twin.config.digest() == small_model.config.digest()


def test_float32_quantization_is_the_only_loss(small_model, tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, small_model, 2, 100)
    back = load_checkpoint(path)
    for name, t in named_parameters(small_model).items():
        err = np.max(np.abs(back.tensors[name].astype(np.float64) - t.data),
                     initial=0.0)
        assert err < 1e-6, name
