"""Synthetic motion-disambiguation benchmark.

Scenes are 32x32 frames with four fixed colored target pads and up to two
instrument sprites.  Sprites are verb-independent, and every verb's motion
program starts from one shared frame-0 pose distribution (the validity
predicate never consults the verb), so a single frame is verb-ambiguous by
construction: verbs exist only in how boxes evolve across frames.

Each verb moves the sprite along a characteristic path and also deforms the
sprite over time (a gripper closes around what it holds, a pulled sprite
draws thin, sawing and pressing pulse the silhouette).  The deformations are
rotation-invariant, start only after frame 0, and stay within a couple of
pixels, so they read cleanly out of the box tracks while remaining subtle
in the rendered frames.

The default vocabulary pairs instrument i with target i and allows all six
verbs in every cell, so static appearance carries zero verb information.
Per-frame brightness flicker and pixel noise further mask sub-patch motion
in the raw pixels while leaving box tracks exact.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data_io import SPLITS, write_box_records, write_clip_frames, write_manifest
from .text import TripletVocabulary, save_vocabulary
from .trajectory import BoxTrack
from .utils import canonical_json, digest, seeded_rng
from .vision import VideoClip


class GenerationError(RuntimeError):
    """Raised when a clip or dataset cannot be generated as requested."""


# ---------------------------------------------------------------------------
# scene parameters
# ---------------------------------------------------------------------------

@dataclass
class SceneSpec:
    height: int = 32
    width: int = 32
    t_frames: int = 8
    channels: int = 3
    sprite_px: int = 5   # odd; sprites render as sprite_px x sprite_px stamps
    pad_px: int = 8      # target pads are pad_px x pad_px rectangles
    background: float = 0.08
    sigma_px: float = 0.03   # per-pixel Gaussian noise
    flicker: float = 0.06    # per-frame uniform brightness jitter (+-)
    sigma_box: float = 0.0   # jitter applied to the emitted box records

    def to_dict(self) -> dict:
        return {"height": self.height, "width": self.width,
                "t_frames": self.t_frames, "channels": self.channels,
                "sprite_px": self.sprite_px, "pad_px": self.pad_px,
                "background": self.background, "sigma_px": self.sigma_px,
                "flicker": self.flicker, "sigma_box": self.sigma_box}

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        return cls(**d)

    def digest(self) -> str:
        return digest(self.to_dict())


# Prompt embeddings are a plain mean over word vectors, so class separation
# in the text space depends on word overlap.  Classes sharing an instrument
# and target already overlap in three words; short verb phrases would leave
# them nearly parallel, so phrases run two to four words, no word repeats
# across verbs except one deliberate pair — saw / sweep share "across" so
# the held-out verb keeps a lexical bridge to a trained one — and that pair
# gets the longest phrases to dilute the shared word.
VERB_NAMES = ("hold", "pull_back", "saw", "press", "sweep", "rest")
VERB_PHRASES = {
    "hold": "clamping tight",
    "pull_back": "drawing slowly backward",
    "saw": "dragging teeth across",
    "press": "leaning weight onto",
    "sweep": "brushing loose debris across",
    "rest": "hovering idle",
}
INSTRUMENT_NAMES = ("probe", "pincer", "blade", "swab")
TARGET_NAMES = ("crimson_pad", "teal_plate", "violet_mound", "amber_wedge")

_INSTRUMENT_COLORS = ((0.95, 0.90, 0.20), (0.20, 0.90, 0.95),
                      (0.95, 0.25, 0.90), (0.92, 0.92, 0.92))
_TARGET_COLORS = ((0.55, 0.12, 0.12), (0.10, 0.45, 0.45),
                  (0.38, 0.12, 0.50), (0.55, 0.45, 0.10))
_SPRITE_SHAPES = ("plus", "square", "cross", "disc")

# motion amplitudes, in pixels
_PULL_STEP = 1.6    # per-frame outward step
_SWEEP_STEP = 1.8   # per-frame lateral step
_SAW_AMP = 2.0      # tangential oscillation around the grip point
_PRESS_AMP = 2.4    # inward poke depth
_GRIP_DIST = 5.0    # grip-point distance from the pad center
_MIN_START = 9.0    # frame-0 distance range from the pad center
_MAX_START = 12.0
_MIN_SEPARATION = 8.0   # frame-0 distance between two sprites
_SIZE_GROW = 2      # sprite growth/shrink step for verb deformations


def default_vocabulary() -> TripletVocabulary:
    """4 instruments x 6 verbs x 4 targets, instrument i tied to target i.

    All six verbs are valid in every (instrument, target) cell, so nothing
    static predicts the verb; every verb is motion-defined.
    """
    valid = [(i, v, i) for i in range(4) for v in range(6)]
    return TripletVocabulary(
        instruments=list(INSTRUMENT_NAMES),
        verbs=list(VERB_NAMES),
        targets=list(TARGET_NAMES),
        valid_triplets=valid,
        verb_phrases=dict(VERB_PHRASES),
        motion_defined_verbs=list(VERB_NAMES),
    )


# ---------------------------------------------------------------------------
# geometry helpers
# ---------------------------------------------------------------------------

def _iround(x: float) -> int:
    return int(math.floor(x + 0.5))


def pad_center(target_id: int, spec: SceneSpec) -> np.ndarray:
    """Fixed quadrant layout: targets 0..3 at (1/4,1/4), (3/4,1/4), (1/4,3/4),
    (3/4,3/4) of the frame, in (x, y) pixels."""
    qx = spec.width // 4
    qy = spec.height // 4
    xs = (qx, 3 * qx, qx, 3 * qx)
    ys = (qy, qy, 3 * qy, 3 * qy)
    return np.array([xs[target_id % 4], ys[target_id % 4]], dtype=np.float64)


def _safe_bounds(spec: SceneSpec) -> tuple[float, float]:
    half = spec.sprite_px // 2 + _SIZE_GROW // 2  # room for the grown sprite
    return float(half), float(min(spec.width, spec.height) - 1 - half)


def _headroom(pos: np.ndarray, d: np.ndarray, lo: float, hi: float) -> float:
    """Travel distance from pos along unit d before leaving the safe square."""
    t = math.inf
    for axis in (0, 1):
        if d[axis] > 1e-9:
            t = min(t, (hi - pos[axis]) / d[axis])
        elif d[axis] < -1e-9:
            t = min(t, (lo - pos[axis]) / d[axis])
    return t


def _in_bounds(p: np.ndarray, lo: float, hi: float) -> bool:
    return lo <= p[0] <= hi and lo <= p[1] <= hi


def pose_valid(start: np.ndarray, center: np.ndarray, spec: SceneSpec) -> bool:
    """Verb-independent feasibility: the pose must leave room for every
    motion program, so rejection sampling cannot leak the verb."""
    lo, hi = _safe_bounds(spec)
    r = start - center
    dist = float(np.hypot(*r))
    if dist < _GRIP_DIST + 2.0 or not _in_bounds(start, lo, hi):
        return False
    u = r / dist
    w = np.array([-u[1], u[0]])
    if _headroom(start, u, lo, hi) < _PULL_STEP * (spec.t_frames - 1) + 0.3:
        return False
    lateral = max(_headroom(start, w, lo, hi), _headroom(start, -w, lo, hi))
    if lateral < _SWEEP_STEP * (spec.t_frames - 1) + 0.4:
        return False
    grip = center + u * _GRIP_DIST
    for point in (grip, grip + w * _SAW_AMP, grip - w * _SAW_AMP,
                  grip - u * _PRESS_AMP):
        if not _in_bounds(point, lo, hi):
            return False
    return True


def sample_pose(rng: np.random.Generator, center: np.ndarray, spec: SceneSpec,
                max_tries: int = 200) -> np.ndarray:
    for _ in range(max_tries):
        theta = rng.uniform(0.0, 2.0 * math.pi)
        rho = rng.uniform(_MIN_START, _MAX_START)
        start = center + rho * np.array([math.cos(theta), math.sin(theta)])
        if pose_valid(start, center, spec):
            return start
    raise GenerationError(f"no feasible start pose near target center {center}")


def motion_positions(verb: str, start: np.ndarray, center: np.ndarray,
                     spec: SceneSpec) -> np.ndarray:
    """Sprite center per frame, [T, 2] in (x, y) pixels.  Frame 0 is always
    the sampled start pose."""
    t_frames = spec.t_frames
    r = start - center
    u = r / float(np.hypot(*r))
    w = np.array([-u[1], u[0]])
    grip = center + u * _GRIP_DIST
    lo, hi = _safe_bounds(spec)
    out = np.empty((t_frames, 2))
    if verb == "rest":
        out[:] = start
    elif verb == "pull_back":
        for t in range(t_frames):
            out[t] = start + u * (_PULL_STEP * t)
    elif verb == "sweep":
        sign = 1.0 if _headroom(start, w, lo, hi) >= _headroom(start, -w, lo, hi) else -1.0
        for t in range(t_frames):
            out[t] = start + w * (sign * _SWEEP_STEP * t)
    elif verb == "hold":
        reach = min(3, t_frames - 1)
        for t in range(t_frames):
            frac = min(t, reach) / reach if reach else 1.0
            out[t] = start + (grip - start) * frac
    elif verb in ("saw", "press"):
        out[0] = start
        if t_frames > 1:
            out[1] = (start + grip) / 2.0
        for t in range(2, t_frames):
            phase = t - 2
            if verb == "saw":
                out[t] = grip + w * (_SAW_AMP * (1.0 if phase % 2 == 0 else -1.0))
            else:
                out[t] = grip - u * (_PRESS_AMP * (phase % 2))
    else:
        raise GenerationError(f"no motion program for verb {verb!r}")
    return out


def motion_sizes(verb: str, spec: SceneSpec) -> np.ndarray:
    """Sprite (width, height) per frame, [T, 2] in pixels.

    Frame 0 is always the base size, so nothing static leaks the verb; the
    later deformation is each verb's rotation-invariant signature: a holding
    gripper closes (grows) once it reaches the grip point, a pulled sprite
    draws thin, sawing narrows on alternate strokes, pressing squashes flat
    and wide on contact, and resting or sweeping sprites keep their shape.
    """
    t_frames = spec.t_frames
    base = spec.sprite_px
    out = np.full((t_frames, 2), base, dtype=np.int64)
    if verb == "hold":
        reach = min(3, t_frames - 1)
        out[reach:] = base + _SIZE_GROW
    elif verb == "pull_back":
        out[1:] = base - _SIZE_GROW
    elif verb == "saw":
        for t in range(2, t_frames):
            if (t - 2) % 2 == 0:
                out[t, 0] = base - _SIZE_GROW
    elif verb == "press":
        for t in range(2, t_frames):
            if (t - 2) % 2 == 1:
                out[t, 0] = base + _SIZE_GROW
                out[t, 1] = base - _SIZE_GROW
    elif verb not in ("rest", "sweep"):
        raise GenerationError(f"no size program for verb {verb!r}")
    return out


def boxes_from_positions(positions: np.ndarray, sizes: np.ndarray, spec: SceneSpec,
                         ) -> list[tuple[int, tuple[float, float, float, float]]]:
    """Tight normalized boxes around the rendered (pixel-rounded) sprite."""
    out = []
    for t, (x, y) in enumerate(positions):
        cx, cy = _iround(x), _iround(y)
        hw, hh = int(sizes[t, 0]) // 2, int(sizes[t, 1]) // 2
        out.append((t, ((cx - hw) / spec.width, (cy - hh) / spec.height,
                        (cx + hw + 1) / spec.width, (cy + hh + 1) / spec.height)))
    return out


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------

def _sprite_mask(shape: str, w: int, h: int) -> np.ndarray:
    cx, cy = w // 2, h // 2
    yy, xx = np.mgrid[0:h, 0:w]
    if shape == "square":
        return np.ones((h, w), dtype=bool)
    if shape == "disc":
        return ((xx - cx) / (cx + 0.5)) ** 2 + ((yy - cy) / (cy + 0.5)) ** 2 <= 1.0
    if shape == "plus":
        return (np.abs(xx - cx) <= 0) | (np.abs(yy - cy) <= 0)
    if shape == "cross":
        return np.abs((xx - cx) * max(cy, 1)) == np.abs((yy - cy) * max(cx, 1))
    raise GenerationError(f"unknown sprite shape {shape!r}")


def render_frame(sprites: list[tuple[int, np.ndarray, tuple[int, int]]],
                 spec: SceneSpec, n_targets: int = 4) -> np.ndarray:
    """One frame: background, all target pads, then (id, center, (w, h))
    sprites in list order."""
    img = np.full((spec.height, spec.width, spec.channels), spec.background)
    ph = spec.pad_px // 2
    for t_id in range(n_targets):
        cx, cy = pad_center(t_id, spec).astype(int)
        color = _TARGET_COLORS[t_id % len(_TARGET_COLORS)]
        img[cy - ph: cy + ph, cx - ph: cx + ph, :] = color[: spec.channels]
    for inst_id, pos, (w, h) in sprites:
        mask = _sprite_mask(_SPRITE_SHAPES[inst_id % len(_SPRITE_SHAPES)], int(w), int(h))
        color = _INSTRUMENT_COLORS[inst_id % len(_INSTRUMENT_COLORS)]
        cx, cy = _iround(pos[0]), _iround(pos[1])
        ys, xs = np.nonzero(mask)
        img[cy - int(h) // 2 + ys, cx - int(w) // 2 + xs, :] = np.asarray(color[: spec.channels])
    return img


# ---------------------------------------------------------------------------
# clip generation
# ---------------------------------------------------------------------------

def gen_clip(seed, spec: SceneSpec, vocab: TripletVocabulary,
             triplets: list[tuple[int, int, int]], clip_id: str = "clip",
             ) -> tuple[VideoClip, list[BoxTrack]]:
    """Render one clip and its exact box tracks.

    ``seed`` may be an int (hashed into a fresh generator) or a Generator.
    Rendering order, pose retries, and noise draws never consult the verb,
    so frame-0 statistics are identical across verbs.
    """
    rng = seed if isinstance(seed, np.random.Generator) else seeded_rng(seed)
    if not 1 <= len(triplets) <= 2:
        raise GenerationError(f"clips hold 1..2 triplets, got {len(triplets)}")
    class_ids = [vocab.class_index(tuple(t)) for t in triplets]  # validates
    inst_ids = [t[0] for t in triplets]
    if len(set(inst_ids)) != len(inst_ids):
        raise GenerationError("triplets in one clip need distinct instruments")

    centers = [pad_center(t[2], spec) for t in triplets]
    for attempt in range(400):
        starts = [sample_pose(rng, c, spec) for c in centers]
        if len(starts) == 1 or float(np.hypot(*(starts[0] - starts[1]))) >= _MIN_SEPARATION:
            break
    else:
        raise GenerationError("could not place instruments without overlap")

    paths = [motion_positions(vocab.verbs[trip[1]], st, ce, spec)
             for trip, st, ce in zip(triplets, starts, centers)]
    sizes = [motion_sizes(vocab.verbs[trip[1]], spec) for trip in triplets]
    flicker = rng.uniform(-spec.flicker, spec.flicker, spec.t_frames)
    noise = (rng.normal(0.0, spec.sigma_px,
                        (spec.t_frames, spec.height, spec.width, spec.channels))
             if spec.sigma_px > 0 else None)

    frames = np.empty((spec.t_frames, spec.height, spec.width, spec.channels))
    for t in range(spec.t_frames):
        img = render_frame([(inst_ids[k], paths[k][t], tuple(sizes[k][t]))
                            for k in range(len(triplets))],
                           spec, n_targets=len(vocab.targets))
        img = img * (1.0 + flicker[t])
        if noise is not None:
            img = img + noise[t]
        frames[t] = np.clip(img, 0.0, 1.0)

    tracks = [BoxTrack(instrument_id=inst_ids[k],
                       boxes=boxes_from_positions(paths[k], sizes[k], spec))
              for k in range(len(triplets))]
    clip = VideoClip(clip_id=clip_id, frames=frames, gt_triplets=frozenset(class_ids))
    return clip, tracks


def oracle_detect(exact_tracks: list[BoxTrack], sigma_box: float,
                  seed) -> list[BoxTrack]:
    """Ground-truth boxes with seeded Gaussian jitter (the detector stand-in).

    sigma_box = 0 returns an exact copy.  Jittered coordinates are clipped to
    [0, 1] and reordered so x1 < x2, y1 < y2 always holds.
    """
    rng = seed if isinstance(seed, np.random.Generator) else seeded_rng(seed)
    out = []
    for track in exact_tracks:
        boxes = []
        for frame, (x1, y1, x2, y2) in track.boxes:
            if sigma_box > 0:
                x1, y1, x2, y2 = np.clip(
                    np.array([x1, y1, x2, y2]) + rng.normal(0.0, sigma_box, 4), 0.0, 1.0)
                x1, x2 = _ordered_pair(x1, x2)
                y1, y2 = _ordered_pair(y1, y2)
            boxes.append((frame, (float(x1), float(y1), float(x2), float(y2))))
        out.append(BoxTrack(instrument_id=track.instrument_id, boxes=boxes))
    return out


def _ordered_pair(a: float, b: float, eps: float = 1e-6) -> tuple[float, float]:
    lo, hi = (a, b) if a <= b else (b, a)
    if hi - lo < eps:
        if lo >= 1.0 - eps:
            lo = hi - eps
        else:
            hi = min(1.0, lo + eps)
    return lo, hi


# ---------------------------------------------------------------------------
# dataset builder
# ---------------------------------------------------------------------------

DEFAULT_SIZES = {"train": 600, "test": 200, "unseen_test": 100}
DEFAULT_HELD_OUT = ("sweep",)
TWO_TRIPLET_FRACTION = 0.35


def _balanced_cycle(classes: list[int], n: int, rng: np.random.Generator) -> list[int]:
    """n class ids, each class appearing floor/ceil(n/len) times, shuffled in
    whole-vocabulary blocks so every prefix stays near-balanced."""
    out: list[int] = []
    while len(out) < n:
        block = list(classes)
        rng.shuffle(block)
        out.extend(block)
    return out[:n]


def build_dataset(out_dir: str | Path, seed: int = 42,
                  spec: SceneSpec | None = None,
                  vocab: TripletVocabulary | None = None,
                  sizes: dict[str, int] | None = None,
                  held_out_verbs: tuple[str, ...] | list[str] = DEFAULT_HELD_OUT,
                  two_triplet_fraction: float = TWO_TRIPLET_FRACTION) -> dict:
    """Write a full dataset directory; returns the manifest dict.

    Train/test draw from seen-verb classes with balanced class cycling;
    unseen_test uses held-out-verb classes exclusively.  Every clip derives
    its own generator from (seed, clip_id), so generation order is
    irrelevant to the output.
    """
    spec = spec or SceneSpec()
    vocab = vocab or default_vocabulary()
    sizes = dict(DEFAULT_SIZES if sizes is None else sizes)
    for split in SPLITS:
        sizes.setdefault(split, 0)

    held = [v for v in held_out_verbs if v]
    unknown = [v for v in held if v not in vocab.verbs]
    if unknown:
        raise GenerationError(f"held-out verbs {unknown} not in vocabulary")
    held_ids = {vocab.verbs.index(v) for v in held}
    seen_classes = [c for c, (_, v, _) in enumerate(vocab.valid_triplets)
                    if v not in held_ids]
    unseen_classes = [c for c, (_, v, _) in enumerate(vocab.valid_triplets)
                      if v in held_ids]
    if (sizes["train"] > 0 or sizes["test"] > 0) and not seen_classes:
        raise GenerationError("every verb is held out; train/test are infeasible")
    if not unseen_classes:
        sizes["unseen_test"] = 0

    out_dir = Path(out_dir)
    (out_dir / "clips").mkdir(parents=True, exist_ok=True)

    clip_records = []
    boxes_by_clip: dict[str, list[BoxTrack]] = {}
    geometry_by_clip: dict[str, list[BoxTrack]] = {}
    split_classes = {"train": seen_classes, "test": seen_classes,
                     "unseen_test": unseen_classes}
    for split in SPLITS:
        classes = split_classes[split]
        if sizes[split] == 0:
            continue
        cycle = _balanced_cycle(classes, sizes[split],
                                seeded_rng(seed, "cycle", split))
        for n in range(sizes[split]):
            clip_id = f"{split}_{n:05d}"
            crng = seeded_rng(seed, clip_id)
            primary = cycle[n]
            triplets = [vocab.valid_triplets[primary]]
            if crng.random() < two_triplet_fraction:
                inst0, _, targ0 = triplets[0]
                partners = [c for c in classes
                            if vocab.valid_triplets[c][0] != inst0
                            and vocab.valid_triplets[c][2] != targ0]
                if partners:
                    triplets.append(vocab.valid_triplets[int(crng.choice(partners))])
            clip, exact = gen_clip(crng, spec, vocab, triplets, clip_id)
            detected = oracle_detect(exact, spec.sigma_box,
                                     seeded_rng(seed, clip_id, "boxes"))
            write_clip_frames(out_dir / "clips" / f"{clip_id}.f32", clip.frames)
            geometry_by_clip[clip_id] = exact
            boxes_by_clip[clip_id] = detected
            content = hashlib.sha256(
                np.ascontiguousarray(clip.frames, dtype="<f4").tobytes()
                + canonical_json([[tr.instrument_id, tr.boxes] for tr in detected]
                                 ).encode()).hexdigest()[:16]
            clip_records.append({"clip_id": clip_id, "split": split,
                                 "triplets": [list(t) for t in triplets],
                                 "file": f"clips/{clip_id}.f32",
                                 "content": content})

    manifest = {
        "format_version": 1,
        "seed": seed,
        "sizes": sizes,
        "held_out_verbs": held,
        "scene": spec.to_dict(),
        "vocab_digest": vocab.digest(),
        "clips": clip_records,
    }
    manifest["digest"] = digest({k: manifest[k] for k in
                                 ("seed", "sizes", "held_out_verbs", "scene",
                                  "vocab_digest", "clips")})
    save_vocabulary(vocab, out_dir / "vocab.json")
    write_box_records(out_dir / "boxes.jsonl", boxes_by_clip)
    write_box_records(out_dir / "geometry.jsonl", geometry_by_clip)
    write_manifest(out_dir / "manifest.json", manifest)
    (out_dir / "scene_spec.json").write_text(canonical_json(spec.to_dict()) + "\n",
                                             encoding="utf-8")
    return manifest



# ---------------------------------------------------------------------------
# frame-0 probe
# ---------------------------------------------------------------------------

def _fit_logistic(x: np.ndarray, y: np.ndarray, seed: int, steps: int = 400,
                  lr: float = 0.05, l2: float = 1e-4) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Binary logistic regression with Adam; returns (w, mean, std)."""
    mu = x.mean(axis=0)
    sd = x.std(axis=0) + 1e-8
    xs = np.concatenate([(x - mu) / sd, np.ones((x.shape[0], 1))], axis=1)
    rng = seeded_rng(seed, "probe-init")
    w = rng.normal(0.0, 1e-3, xs.shape[1])
    m = np.zeros_like(w)
    v = np.zeros_like(w)
    for t in range(1, steps + 1):
        p = 1.0 / (1.0 + np.exp(-np.clip(xs @ w, -40, 40)))
        g = xs.T @ (p - y) / xs.shape[0] + l2 * w
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        w = w - lr * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    return w, mu, sd


def _predict_logistic(w: np.ndarray, mu: np.ndarray, sd: np.ndarray,
                      x: np.ndarray) -> np.ndarray:
    xs = np.concatenate([(x - mu) / sd, np.ones((x.shape[0], 1))], axis=1)
    return (xs @ w) > 0.0


def frame0_pairwise_probe(dataset, seed: int = 0,
                          verbs: list[str] | None = None) -> dict:
    """Train a frame-0-only verb probe for every motion-defined verb pair.

    Uses single-triplet clips (unambiguous verb label), fits binary logistic
    regression on raw frame-0 pixels of the train split, and reports test
    accuracy per pair.  A leak-free benchmark keeps the mean near 50%.
    """
    vocab = dataset.vocab
    names = verbs if verbs is not None else (vocab.motion_defined_verbs or vocab.verbs)
    ids = [vocab.verbs.index(v) for v in names]

    def split_data(split):
        feats, verb_lists = dataset.frame0_features(split)
        keep = [n for n, vs in enumerate(verb_lists) if len(vs) == 1]
        return feats[keep], np.array([verb_lists[n][0] for n in keep])

    xtr, ytr = split_data("train")
    xte, yte = split_data("test")
    pairs = {}
    for a_pos, va in enumerate(ids):
        for vb in ids[a_pos + 1:]:
            tr_mask = np.isin(ytr, (va, vb))
            te_mask = np.isin(yte, (va, vb))
            # both verbs need examples on both sides, or the fit degenerates
            if min((ytr == va).sum(), (ytr == vb).sum()) < 2:
                continue
            if min((yte == va).sum(), (yte == vb).sum()) < 2:
                continue
            w, mu, sd = _fit_logistic(xtr[tr_mask], (ytr[tr_mask] == vb).astype(float),
                                      seed=seed + va * 97 + vb)
            pred = _predict_logistic(w, mu, sd, xte[te_mask])
            acc = float((pred == (yte[te_mask] == vb)).mean())
            pairs[f"{vocab.verbs[va]}|{vocab.verbs[vb]}"] = 100.0 * acc
    if not pairs:
        raise GenerationError("no verb pair has enough single-triplet clips")
    return {"pairs": pairs,
            "mean_accuracy": float(np.mean(list(pairs.values()))),
            "chance": 50.0,
            "n_pairs": len(pairs)}
