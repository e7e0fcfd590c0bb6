"""Checkpoint serialization.

Single-file binary layout::

    magic   b"TRAJPRED1"                     (9 bytes)
    hlen    uint64 little-endian             (8 bytes)
    header  canonical JSON, utf-8            (hlen bytes)
    payload concatenated little-endian float32 tensor data

The header records format_version, stage, step, the full run config and
vocabulary (with digests), and per-tensor shape/offset/trainable metadata in
sorted name order, so a checkpoint alone rebuilds the model exactly.
Weights are stored in float32; compute stays float64 in memory, so a
save -> load -> save round trip is byte-identical.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import RunConfig
from .text import TripletVocabulary
from .utils import canonical_json

MAGIC = b"TRAJPRED1"
FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    """Raised for unreadable, truncated, or inconsistent checkpoint files."""


@dataclass
class Checkpoint:
    stage: int
    step: int
    config: RunConfig
    vocab: TripletVocabulary
    tensors: dict[str, np.ndarray]  # float32 arrays, name-sorted insertion order
    trainable: dict[str, bool]
    header: dict


def _header_and_payload(named: dict[str, "object"], stage: int, step: int,
                        config: RunConfig, vocab: TripletVocabulary) -> tuple[bytes, bytes]:
    meta: dict[str, dict] = {}
    chunks: list[bytes] = []
    offset = 0
    for name in sorted(named):
        t = named[name]
        arr = np.ascontiguousarray(t.data, dtype="<f4")
        meta[name] = {
            "shape": list(arr.shape),
            "offset": offset,
            "dtype": "<f4",
            "trainable": bool(t.requires_grad),
        }
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    header = {
        "format_version": FORMAT_VERSION,
        "stage": int(stage),
        "step": int(step),
        "config": config.to_dict(),
        "config_digest": config.digest(),
        "vocab": vocab.to_dict(),
        "vocab_digest": vocab.digest(),
        "tensors": meta,
    }
    return canonical_json(header).encode("utf-8"), b"".join(chunks)


def save_checkpoint(path: str | Path, model, stage: int, step: int) -> None:
    from .model import named_parameters  # local import to avoid a cycle

    header, payload = _header_and_payload(named_parameters(model), stage, step,
                                          model.config, model.vocab)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        f.write(payload)


def checkpoint_bytes(model, stage: int, step: int) -> bytes:
    from .model import named_parameters

    header, payload = _header_and_payload(named_parameters(model), stage, step,
                                          model.config, model.vocab)
    return MAGIC + struct.pack("<Q", len(header)) + header + payload


def load_checkpoint(path: str | Path) -> Checkpoint:
    try:
        blob = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if len(blob) < len(MAGIC) + 8 or blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
    (hlen,) = struct.unpack("<Q", blob[len(MAGIC): len(MAGIC) + 8])
    hstart = len(MAGIC) + 8
    if len(blob) < hstart + hlen:
        raise CheckpointError(f"{path} is truncated inside the header")
    try:
        header = json.loads(blob[hstart: hstart + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path} has an unreadable header: {e}") from e
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format_version {header.get('format_version')!r} unsupported")
    payload = blob[hstart + hlen:]
    tensors: dict[str, np.ndarray] = {}
    trainable: dict[str, bool] = {}
    for name in sorted(header["tensors"]):
        meta = header["tensors"][name]
        shape = tuple(meta["shape"])
        n = int(np.prod(shape)) if shape else 1
        start, end = meta["offset"], meta["offset"] + 4 * n
        if end > len(payload):
            raise CheckpointError(f"{path} is truncated inside tensor {name}")
        tensors[name] = np.frombuffer(payload[start:end], dtype="<f4").reshape(shape).copy()
        trainable[name] = bool(meta["trainable"])
    config = RunConfig.from_dict(header["config"])
    vocab = TripletVocabulary.from_dict(header["vocab"])
    if config.digest() != header["config_digest"]:
        raise CheckpointError(f"{path}: config digest mismatch")
    if vocab.digest() != header["vocab_digest"]:
        raise CheckpointError(f"{path}: vocabulary digest mismatch")
    return Checkpoint(stage=int(header["stage"]), step=int(header["step"]),
                      config=config, vocab=vocab, tensors=tensors,
                      trainable=trainable, header=header)


def load_into(model, ckpt: Checkpoint) -> None:
    """Overwrite model tensors and trainable flags in place from a checkpoint."""
    from .model import named_parameters

    named = named_parameters(model)
    missing = sorted(set(ckpt.tensors) - set(named))
    extra = sorted(set(named) - set(ckpt.tensors))
    if missing or extra:
        raise CheckpointError(
            f"tensor name mismatch: missing in model {missing[:3]}, absent in file {extra[:3]}")
    for name, t in named.items():
        arr = ckpt.tensors[name]
        if tuple(arr.shape) != t.shape:
            raise CheckpointError(
                f"tensor {name}: file shape {tuple(arr.shape)} vs model {t.shape}")
        t.data = arr.astype(np.float64)
        t.requires_grad = ckpt.trainable[name]
        t.grad = None


def restore_model(ckpt: Checkpoint):
    """Build a model from the checkpoint's own config/vocab and load weights."""
    from .model import build_model

    model = build_model(ckpt.config, ckpt.vocab)
    load_into(model, ckpt)
    return model
