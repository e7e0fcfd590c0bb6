"""Built-in integrity checks, runnable from the CLI on any install.

Each check returns {"check": name, "status": "pass"|"fail", ...}.  Gradient
checks resolve ops through the ndcore module at call time, so corrupting a
backward rule is caught and named.  The suite is a fast subset of the full
test suite and finishes well under the two-minute budget.
"""

from __future__ import annotations

import traceback

import numpy as np

from . import metrics, ndcore
from .config import RunConfig
from .layers import init_cross_attn_block, init_self_attn_block
from .model import (
    GROUP_FROZEN,
    build_model,
    group_of,
    named_parameters,
)
from .ndcore import Tensor
from .synthdata import SceneSpec, default_vocabulary, gen_clip
from .trajectory import BoxTrack, augment, build_trajectory_tokens, init_trajectory_params
from .train import train_stage
from .utils import seeded_rng
from .vision import TokenGrid, grid_layout


# ---------------------------------------------------------------------------
# finite differences
# ---------------------------------------------------------------------------

def finite_diff_max_err(build_loss, params: list[Tensor], rng,
                        step: float = 1e-5, max_coords: int = 25) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``build_loss`` must recompute the scalar loss from the params' current
    data.  The denominator is floored so near-zero gradients are compared
    absolutely at 1e-4 scale.
    """
    loss = build_loss()
    for p in params:
        p.grad = None
    ndcore.backward(loss)
    worst = 0.0
    for p in params:
        if p.grad is None:
            raise AssertionError("parameter received no gradient")
        flat = p.data.reshape(-1)
        n = flat.shape[0]
        coords = (np.arange(n) if n <= max_coords
                  else rng.choice(n, size=max_coords, replace=False))
        for c in coords:
            keep = flat[c]
            flat[c] = keep + step
            up = build_loss().item()
            flat[c] = keep - step
            down = build_loss().item()
            flat[c] = keep
            fd = (up - down) / (2.0 * step)
            an = p.grad.reshape(-1)[c]
            denom = max(abs(an), abs(fd), 1e-4)
            worst = max(worst, abs(an - fd) / denom)
    return worst


def _t(rng, *shape, grad=True) -> Tensor:
    return Tensor(rng.normal(0.0, 1.0, shape), requires_grad=grad)


def _reducer(rng, shape):
    """A fixed random weighting turning a tensor of ``shape`` into a scalar.

    The weight is drawn once so the returned closure is a pure function of
    its argument; finite differencing depends on that.
    """
    r = Tensor(rng.normal(0.0, 1.0, shape))

    def reduce(x: Tensor) -> Tensor:
        return ndcore.tsum(ndcore.mul(x, r))

    return reduce


def gradient_cases(rng) -> dict[str, tuple]:
    """name -> (params, build_loss); all ops late-bound through ndcore."""
    cases: dict[str, tuple] = {}

    a = _t(rng, 3, 4)
    b = _t(rng, 4)
    w_add = _reducer(rng, (3, 4))
    cases["grad:add"] = ([a, b], lambda: w_add(ndcore.add(a, b)))

    m1 = _t(rng, 2, 3, 4)
    m2 = _t(rng, 4, 5)
    w_mm = _reducer(rng, (2, 3, 5))
    cases["grad:matmul"] = ([m1, m2], lambda: w_mm(ndcore.matmul(m1, m2)))

    mu = _t(rng, 3, 5)
    mv = _t(rng, 3, 5)
    w_mul = _reducer(rng, (3, 5))
    cases["grad:mul"] = ([mu, mv], lambda: w_mul(ndcore.mul(mu, mv)))

    sx = _t(rng, 4, 6)
    w_sm = _reducer(rng, (4, 6))
    cases["grad:softmax"] = ([sx], lambda: w_sm(ndcore.softmax(sx)))

    gx = _t(rng, 5, 3)
    w_g = _reducer(rng, (5, 3))
    cases["grad:gelu"] = ([gx], lambda: w_g(ndcore.gelu(gx)))

    lx = _t(rng, 4, 6)
    lg = _t(rng, 6)
    lb = _t(rng, 6)
    w_ln = _reducer(rng, (4, 6))
    cases["grad:layer_norm"] = ([lx, lg, lb],
                                lambda: w_ln(ndcore.layer_norm(lx, lg, lb)))

    cu = _t(rng, 4, 5)
    cv = _t(rng, 3, 5)
    w_cos = _reducer(rng, (4, 3))
    cases["grad:cosine_matrix"] = ([cu, cv],
                                   lambda: w_cos(ndcore.cosine_matrix(cu, cv)))

    bs = _t(rng, 3, 4)
    by = (rng.random((3, 4)) < 0.5).astype(np.float64)
    cases["grad:bce_with_logits"] = ([bs], lambda: ndcore.bce_with_logits(bs, by))

    from .layers import cross_attn_block, self_attn_block
    block = init_self_attn_block(8, 2, rng)
    ax = _t(rng, 5, 8)
    w_blk = _reducer(rng, (5, 8))
    cases["grad:attention_block"] = (
        [ax, block.attn.wq, block.attn.wo, block.ffn.w1],
        lambda: w_blk(self_attn_block(ax, block)))

    xb = init_cross_attn_block(8, 2, rng)
    q = _t(rng, 2, 8)
    kv = _t(rng, 6, 8)
    w_x = _reducer(rng, (2, 8))
    cases["grad:cross_attention"] = (
        [q, kv, xb.attn.wq, xb.attn.wv],
        lambda: w_x(cross_attn_block(q, kv, xb)))

    return cases


def _run_gradient_checks() -> list[dict]:
    rng = seeded_rng(7, "selfcheck-grad")
    out = []
    for name, (params, build) in gradient_cases(rng).items():
        try:
            err = finite_diff_max_err(build, params, rng)
            status = "pass" if err <= 1e-4 else "fail"
            out.append({"check": name, "status": status, "max_rel_err": err})
        except Exception as e:  # noqa: BLE001 - report, don't crash the suite
            out.append({"check": name, "status": "fail", "error": repr(e)})
    return out


# ---------------------------------------------------------------------------
# metric oracles (independent loop-based reimplementations)
# ---------------------------------------------------------------------------

def _seq_mean(vals):
    total = 0.0
    for v in vals:
        total += v
    return total / len(vals)


def _brute_ap(scores, labels):
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    hits = 0
    precisions = []
    for rank, i in enumerate(order, start=1):
        if labels[i] > 0:
            hits += 1
            precisions.append(hits / rank)
    if not precisions:
        return None
    return 100.0 * _seq_mean(precisions)


def _brute_topk(scores, labels, k):
    accs = []
    for n in range(len(scores)):
        gt = [c for c in range(len(scores[n])) if labels[n][c] > 0]
        if not gt:
            continue
        kk = len(gt) if k is None else k
        order = sorted(range(len(scores[n])), key=lambda c: (-scores[n][c], c))[:kk]
        accs.append(len(set(order) & set(gt)) / len(gt))
    return None if not accs else 100.0 * _seq_mean(accs)


def _run_metric_checks() -> list[dict]:
    rng = seeded_rng(11, "selfcheck-metrics")
    out = []
    ap_ok = topk_ok = True
    ap_detail = topk_detail = ""
    for trial in range(25):
        n = int(rng.integers(1, 12))
        c = int(rng.integers(2, 8))
        scores = np.round(rng.normal(0, 1, (n, c)), 2)  # rounding forces ties
        labels = (rng.random((n, c)) < 0.35).astype(int)
        for col in range(c):
            got = metrics.average_precision(scores[:, col], labels[:, col])
            want = _brute_ap(list(scores[:, col]), list(labels[:, col]))
            if got != want:
                ap_ok = False
                ap_detail = f"AP mismatch {got} vs {want} (trial {trial})"
        for k in (None, 1, 3):
            got = metrics.top_k_accuracy(scores, labels, k)
            want = _brute_topk(scores.tolist(), labels.tolist(), k)
            if got != want:
                topk_ok = False
                topk_detail = f"topk mismatch {got} vs {want} (k={k})"
    out.append({"check": "metric:average_precision",
                "status": "pass" if ap_ok else "fail", "detail": ap_detail})
    out.append({"check": "metric:top_k",
                "status": "pass" if topk_ok else "fail", "detail": topk_detail})
    return out


# ---------------------------------------------------------------------------
# closed forms and shape law
# ---------------------------------------------------------------------------

def _run_closed_forms() -> list[dict]:
    out = []
    loss = ndcore.bce_with_logits(Tensor(np.array([0.0, 0.0])), np.array([1.0, 0.0]))
    err = abs(loss.item() - float(np.log(2.0)))
    out.append({"check": "bce:ln2", "status": "pass" if err < 1e-12 else "fail",
                "abs_err": err})

    sat = ndcore.bce_with_logits(Tensor(np.array([40.0, -40.0])), np.array([1.0, 0.0]))
    ok = np.isfinite(sat.item()) and sat.item() < 1e-12
    out.append({"check": "bce:saturation", "status": "pass" if ok else "fail",
                "value": sat.item()})

    sm = ndcore.softmax(Tensor(np.array([[0.0, 1e4]]))).data
    ok = np.all(np.isfinite(sm)) and abs(sm.sum() - 1.0) < 1e-12
    out.append({"check": "softmax:stability", "status": "pass" if ok else "fail"})
    return out


def _run_shape_law() -> list[dict]:
    rng = seeded_rng(3, "selfcheck-shape")
    params = init_trajectory_params(16, heads=8, depth=1, rng=rng)
    ok, detail = True, ""
    for k in range(5):
        units, rows, cols = grid_layout(8, 32, 32, 8)
        tokens = Tensor(rng.normal(0, 1, (units * rows * cols, 16)))
        grid = TokenGrid(tokens=tokens, t_frames=8, height=32, width=32,
                         patch=8, units=units, rows=rows, cols=cols)
        tracks = [BoxTrack(instrument_id=j,
                           boxes=[(t, (0.1, 0.1, 0.4, 0.4)) for t in range(8)])
                  for j in range(k)]
        taus = build_trajectory_tokens(grid, tracks, params)
        aug = augment(grid, taus)
        if aug.tokens.shape[0] != grid.n_tokens + k:
            ok, detail = False, f"K={k}: {aug.tokens.shape[0]} != {grid.n_tokens + k}"
    return [{"check": "shape:augmented_length", "status": "pass" if ok else "fail",
             "detail": detail}]


# ---------------------------------------------------------------------------
# freeze invariant on a miniature end-to-end run
# ---------------------------------------------------------------------------

class _MemoryDataset:
    """In-memory dataset satisfying the training-loop protocol."""

    def __init__(self, clips, tracks, vocab):
        self._clips = clips
        self._tracks = tracks
        self.vocab = vocab

    def split_ids(self, split):
        return [c.clip_id for c in self._clips]

    def token_grids(self, model, split):
        from .model import encode_clip
        return [encode_clip(model, c) for c in self._clips]

    def label_matrix(self, split):
        y = np.zeros((len(self._clips), self.vocab.n_classes), dtype=np.int64)
        for n, c in enumerate(self._clips):
            for cid in c.gt_triplets:
                y[n, cid] = 1
        return y

    def tracks(self, clip_id):
        return self._tracks[clip_id]


def tiny_config(**overrides) -> RunConfig:
    base = dict(d_v=16, d_t=16, pred_depth=1, pred_heads=2, n_query=2,
                pool_depth=1, pool_heads=2, txt_depth=1, txt_heads=2,
                m_context=2, batch_size=4, steps_per_stage=3, seed=5)
    base.update(overrides)
    return RunConfig(**base)


def tiny_dataset(vocab, n_clips: int = 6, seed: int = 9) -> _MemoryDataset:
    spec = SceneSpec()
    clips, tracks = [], {}
    for n in range(n_clips):
        trip = vocab.valid_triplets[n % len(vocab.valid_triplets)]
        clip, tr = gen_clip(seeded_rng(seed, n), spec, vocab, [trip], f"mini_{n:03d}")
        clips.append(clip)
        tracks[clip.clip_id] = tr
    return _MemoryDataset(clips, tracks, vocab)


def _run_freeze_check(steps: int = 3) -> list[dict]:
    vocab = default_vocabulary()
    model = build_model(tiny_config(), vocab)
    data = tiny_dataset(vocab)
    before = {n: t.data.tobytes() for n, t in named_parameters(model).items()}
    train_stage(model, data, 1, steps=steps)
    train_stage(model, data, 2, steps=steps)
    frozen_ok, trained_ok, detail = True, True, ""
    changed = {n for n, t in named_parameters(model).items()
               if t.data.tobytes() != before[n]}
    for name in before:
        if group_of(name) == GROUP_FROZEN and name in changed:
            frozen_ok, detail = False, f"frozen tensor {name} changed"
    for must_change in ("pred.", "traj.", "text.context"):
        if not any(n.startswith(must_change) for n in changed):
            trained_ok, detail = False, f"no tensor under {must_change} changed"
    return [{"check": "freeze:frozen_untouched",
             "status": "pass" if frozen_ok else "fail", "detail": detail},
            {"check": "freeze:trainable_move",
             "status": "pass" if trained_ok else "fail", "detail": detail}]


def _run_checkpoint_roundtrip() -> list[dict]:
    from .checkpoint import checkpoint_bytes, load_checkpoint, restore_model
    import os
    import tempfile

    vocab = default_vocabulary()
    model = build_model(tiny_config(), vocab)
    blob1 = checkpoint_bytes(model, stage=1, step=0)
    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "ck.bin")
        with open(path, "wb") as f:
            f.write(blob1)
        restored = restore_model(load_checkpoint(path))
        blob2 = checkpoint_bytes(restored, stage=1, step=0)
    ok = blob1 == blob2
    return [{"check": "checkpoint:roundtrip", "status": "pass" if ok else "fail"}]


def run_all() -> list[dict]:
    checks: list[dict] = []
    for runner in (_run_gradient_checks, _run_metric_checks, _run_closed_forms,
                   _run_shape_law, _run_checkpoint_roundtrip, _run_freeze_check):
        try:
            checks.extend(runner())
        except Exception:  # noqa: BLE001 - a crashed runner is itself a failure
            checks.append({"check": f"runner:{runner.__name__}", "status": "fail",
                           "error": traceback.format_exc(limit=3)})
    return checks

