"""Dataset directory layout and file formats.

A dataset directory holds::

    manifest.json     sizes, splits, scene parameters, per-clip records, digest
    vocab.json        triplet vocabulary
    boxes.jsonl       detector-interface box records (possibly jittered)
    geometry.jsonl    exact ground-truth boxes (same schema, jitter-free)
    clips/<id>.f32    raw little-endian float32 frames, C-order [T, H, W, Ch]

Box record schema (one JSON object per line)::

    {"clip_id": ..., "instrument_id": ..., "frame": ..., "x1": ..., "y1": ..., "x2": ..., "y2": ...}

Score/label matrices are exported as ``<prefix>.f32`` plus a ``<prefix>.json``
sidecar carrying the shape.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .text import TripletVocabulary, load_vocabulary
from .trajectory import BoxTrack
from .utils import canonical_json
from .vision import VideoClip

SPLITS = ("train", "test", "unseen_test")


class DatasetError(RuntimeError):
    """Raised for missing or malformed dataset files."""


# ---------------------------------------------------------------------------
# raw array files
# ---------------------------------------------------------------------------

def write_clip_frames(path: str | Path, frames: np.ndarray) -> None:
    arr = np.ascontiguousarray(frames, dtype="<f4")
    Path(path).write_bytes(arr.tobytes())


def read_clip_frames(path: str | Path, t: int, h: int, w: int, ch: int) -> np.ndarray:
    blob = Path(path).read_bytes()
    expect = t * h * w * ch * 4
    if len(blob) != expect:
        raise DatasetError(f"{path}: {len(blob)} bytes, expected {expect} "
                           f"for [{t},{h},{w},{ch}] float32")
    return np.frombuffer(blob, dtype="<f4").reshape(t, h, w, ch).astype(np.float64)


def save_matrix(prefix: str | Path, arr: np.ndarray) -> None:
    prefix = Path(prefix)
    data = np.ascontiguousarray(arr, dtype="<f4")
    prefix.with_suffix(".f32").write_bytes(data.tobytes())
    prefix.with_suffix(".json").write_text(
        canonical_json({"shape": list(data.shape), "dtype": "<f4"}) + "\n",
        encoding="utf-8")


def load_matrix(prefix: str | Path) -> np.ndarray:
    prefix = Path(prefix)
    side = json.loads(prefix.with_suffix(".json").read_text(encoding="utf-8"))
    blob = prefix.with_suffix(".f32").read_bytes()
    shape = tuple(side["shape"])
    expect = int(np.prod(shape)) * 4
    if len(blob) != expect:
        raise DatasetError(f"{prefix}: payload {len(blob)} bytes, sidecar says {expect}")
    return np.frombuffer(blob, dtype="<f4").reshape(shape).astype(np.float64)


# ---------------------------------------------------------------------------
# box records
# ---------------------------------------------------------------------------

def write_box_records(path: str | Path, tracks_by_clip: dict[str, list[BoxTrack]]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for clip_id in sorted(tracks_by_clip):
            for track in tracks_by_clip[clip_id]:
                for frame, (x1, y1, x2, y2) in track.boxes:
                    f.write(canonical_json({
                        "clip_id": clip_id, "instrument_id": track.instrument_id,
                        "frame": frame, "x1": x1, "y1": y1, "x2": x2, "y2": y2,
                    }) + "\n")


def read_box_records(path: str | Path) -> dict[str, list[BoxTrack]]:
    """Group records into per-clip tracks, sorted by instrument id then frame."""
    rows: dict[str, dict[int, list[tuple[int, tuple[float, float, float, float]]]]] = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise DatasetError(f"{path}:{lineno}: bad JSON: {e}") from e
            boxes = rows.setdefault(rec["clip_id"], {}).setdefault(int(rec["instrument_id"]), [])
            boxes.append((int(rec["frame"]),
                          (float(rec["x1"]), float(rec["y1"]),
                           float(rec["x2"]), float(rec["y2"]))))
    out: dict[str, list[BoxTrack]] = {}
    for clip_id, per_inst in rows.items():
        tracks = []
        for inst in sorted(per_inst):
            tracks.append(BoxTrack(instrument_id=inst,
                                   boxes=sorted(per_inst[inst], key=lambda fb: fb[0])))
        out[clip_id] = tracks
    return out


# ---------------------------------------------------------------------------
# dataset directory
# ---------------------------------------------------------------------------

def write_manifest(path: str | Path, manifest: dict) -> None:
    Path(path).write_text(canonical_json(manifest) + "\n", encoding="utf-8")


def read_manifest(path: str | Path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise DatasetError(f"cannot read manifest {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise DatasetError(f"manifest {path} is not valid JSON: {e}") from e


class Dataset:
    """Read-side view of a dataset directory with per-model grid caching."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.manifest = read_manifest(self.root / "manifest.json")
        self.vocab: TripletVocabulary = load_vocabulary(self.root / "vocab.json")
        self.scene = self.manifest["scene"]
        self._clips_by_split: dict[str, list[dict]] = {s: [] for s in SPLITS}
        self._by_id: dict[str, dict] = {}
        for rec in self.manifest["clips"]:
            if rec["split"] not in self._clips_by_split:
                raise DatasetError(f"clip {rec['clip_id']} has unknown split {rec['split']}")
            self._clips_by_split[rec["split"]].append(rec)
            self._by_id[rec["clip_id"]] = rec
        self._boxes = read_box_records(self.root / "boxes.jsonl")
        self._frames_cache: dict[str, np.ndarray] = {}
        self._grid_cache: dict[tuple, list] = {}

    # -- clip access --------------------------------------------------------

    def split_ids(self, split: str) -> list[str]:
        if split not in self._clips_by_split:
            raise DatasetError(f"unknown split {split!r}; have {sorted(self._clips_by_split)}")
        return [rec["clip_id"] for rec in self._clips_by_split[split]]

    def _frames(self, clip_id: str) -> np.ndarray:
        if clip_id not in self._frames_cache:
            rec = self._by_id[clip_id]
            sc = self.scene
            self._frames_cache[clip_id] = read_clip_frames(
                self.root / rec["file"], sc["t_frames"], sc["height"],
                sc["width"], sc.get("channels", 3))
        return self._frames_cache[clip_id]

    def clip(self, clip_id: str) -> VideoClip:
        if clip_id not in self._by_id:
            raise DatasetError(f"unknown clip id {clip_id!r}")
        rec = self._by_id[clip_id]
        gt = frozenset(self.vocab.class_index(tuple(t)) for t in rec["triplets"])
        return VideoClip(clip_id=clip_id, frames=self._frames(clip_id), gt_triplets=gt)

    def tracks(self, clip_id: str) -> list[BoxTrack]:
        return self._boxes.get(clip_id, [])

    # -- matrices ------------------------------------------------------------

    def label_matrix(self, split: str) -> np.ndarray:
        ids = self.split_ids(split)
        y = np.zeros((len(ids), self.vocab.n_classes), dtype=np.int64)
        for n, cid in enumerate(ids):
            for t in self._by_id[cid]["triplets"]:
                y[n, self.vocab.class_index(tuple(t))] = 1
        return y

    def token_grids(self, model, split: str) -> list:
        """Frozen tubelet encodings for a split, cached per encoder weights."""
        from .model import encode_clip

        key_src = (model.vision.proj.data.tobytes()
                   + model.vision.ln_gain.data.tobytes()
                   + model.vision.ln_bias.data.tobytes())
        key = (split, hashlib.sha256(key_src).hexdigest())
        if key not in self._grid_cache:
            self._grid_cache[key] = [encode_clip(model, self.clip(cid))
                                     for cid in self.split_ids(split)]
        return self._grid_cache[key]

    # -- probe features ------------------------------------------------------

    def frame0_features(self, split: str) -> tuple[np.ndarray, list[list[int]]]:
        """Flattened first frames [N, H*W*Ch] plus each clip's verb id list."""
        ids = self.split_ids(split)
        feats = np.stack([self._frames(cid)[0].reshape(-1) for cid in ids])
        verbs = [[t[1] for t in self._by_id[cid]["triplets"]] for cid in ids]
        return feats, verbs
