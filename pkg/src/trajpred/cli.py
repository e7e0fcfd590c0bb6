"""Command-line entry point: dataset generation, two-stage training,
evaluation, heatmaps, and self-checks.

Exit codes: 0 success, 1 user error (bad flags, missing/mismatched files),
2 internal invariant violation.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .checkpoint import CheckpointError, load_checkpoint, load_into, restore_model
from .config import ConfigError, RunConfig
from .data_io import Dataset, DatasetError, save_matrix
from .heatmap import save_heatmaps
from .metrics import evaluate, format_report
from .model import build_model
from .ndcore import ShapeError
from .selfcheck import run_all
from .synthdata import (
    DEFAULT_HELD_OUT,
    DEFAULT_SIZES,
    GenerationError,
    SceneSpec,
    build_dataset,
    default_vocabulary,
)
from .text import UnknownTokenError, UnknownVerbError
from .train import MissingGradientError, score_split, train_stage
from .utils import canonical_json
from .vision import FrozenParameterError

EXIT_OK = 0
EXIT_USER = 1
EXIT_INTERNAL = 2

_USER_ERRORS = (ConfigError, DatasetError, CheckpointError, GenerationError,
                UnknownVerbError, UnknownTokenError, FileNotFoundError,
                NotADirectoryError, PermissionError, KeyError, ValueError)
_INTERNAL_ERRORS = (FrozenParameterError, MissingGradientError, ShapeError,
                    AssertionError)


class UserError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); flag mistakes are user errors
        raise UserError(message)


def _apply_thread_cap() -> None:
    cap = os.environ.get("TRAJPRED_THREADS")
    if cap:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, cap)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="trajpred",
                description="Trajectory-conditioned action-triplet recognition")
    sub = p.add_subparsers(dest="cmd", required=True)

    g = sub.add_parser("gen-data", help="generate the synthetic benchmark")
    g.add_argument("--out", required=True, help="output dataset directory")
    g.add_argument("--seed", type=int, default=42)
    g.add_argument("--held-out-verbs", default=",".join(DEFAULT_HELD_OUT),
                   help="comma-separated verbs excluded from training "
                        "(empty string holds out nothing)")
    g.add_argument("--sizes", default=None,
                   help="train,test,unseen_test clip counts (e.g. 600,200,100)")

    t = sub.add_parser("train", help="run the two-stage training pipeline")
    t.add_argument("--config", default=None,
                   help="JSON run-config file (defaults apply when omitted)")
    t.add_argument("--stage", choices=("1", "2", "both"), default="both")
    t.add_argument("--out", required=True, help="final checkpoint path")
    t.add_argument("--data", default=None, help="dataset dir (overrides config)")
    t.add_argument("--init", default=None, help="checkpoint to start from")
    t.add_argument("--no-trajectory", action="store_true",
                   help="train the no-trajectory ablation")
    t.add_argument("--cold-start", action="store_true",
                   help="allow stage 2 without a stage-1 checkpoint")
    t.add_argument("--steps", type=int, default=None, help="override steps per stage")
    t.add_argument("--seed", type=int, default=None, help="override config seed")

    e = sub.add_parser("eval", help="score a split and report metrics")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--split", choices=("train", "test", "unseen_test"), default="test")
    e.add_argument("--report", default=None, help="write MetricsReport JSON here")
    e.add_argument("--data", default=None, help="dataset dir (overrides config)")
    e.add_argument("--no-trajectory", action="store_true",
                   help="evaluate with trajectory tokens disabled")
    e.add_argument("--scores", default=None,
                   help="prefix for exported score/label matrices")

    h = sub.add_parser("heatmap", help="write similarity heatmaps for one clip")
    h.add_argument("--ckpt", required=True)
    h.add_argument("--clip", required=True, help="clip id from the dataset")
    h.add_argument("--triplet", required=True,
                   help="space-separated names: 'instrument verb target'")
    h.add_argument("--out", required=True, help="output directory")
    h.add_argument("--data", default=None, help="dataset dir (overrides config)")

    sub.add_parser("selfcheck", help="run built-in integrity checks")
    return p


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def _parse_sizes(text: str | None) -> dict[str, int] | None:
    if text is None:
        return None
    parts = text.split(",")
    if len(parts) != 3:
        raise UserError(f"--sizes needs three comma-separated counts, got {text!r}")
    try:
        a, b, c = (int(x) for x in parts)
    except ValueError as err:
        raise UserError(f"--sizes values must be integers: {text!r}") from err
    if min(a, b, c) < 0:
        raise UserError("--sizes values must be non-negative")
    return {"train": a, "test": b, "unseen_test": c}


def cmd_gen_data(args) -> int:
    held = tuple(v for v in args.held_out_verbs.split(",") if v.strip())
    manifest = build_dataset(args.out, seed=args.seed, spec=SceneSpec(),
                             vocab=default_vocabulary(),
                             sizes=_parse_sizes(args.sizes),
                             held_out_verbs=held)
    print(canonical_json({"out": str(args.out), "digest": manifest["digest"],
                          "sizes": manifest["sizes"],
                          "held_out_verbs": manifest["held_out_verbs"],
                          "n_clips": len(manifest["clips"])}))
    return EXIT_OK


def _load_dataset(path: str) -> Dataset:
    root = Path(path)
    if not (root / "manifest.json").exists():
        raise UserError(f"no dataset at {root} (missing manifest.json)")
    return Dataset(root)


def cmd_train(args) -> int:
    config = RunConfig.from_file(args.config) if args.config else RunConfig()
    if args.data:
        config = config.replace(data_dir=args.data)
    if args.seed is not None:
        config = config.replace(seed=args.seed)
    if args.no_trajectory:
        config = config.replace(use_trajectory=False)
    dataset = _load_dataset(config.data_dir)
    if dataset.vocab.digest() != dataset.manifest["vocab_digest"]:
        raise UserError("dataset vocab.json does not match its manifest digest")

    stages = {"1": [1], "2": [2], "both": [1, 2]}[args.stage]
    model = build_model(config, dataset.vocab)
    if args.init:
        ckpt = load_checkpoint(args.init)
        if ckpt.vocab.digest() != dataset.vocab.digest():
            raise UserError("checkpoint vocabulary does not match the dataset")
        load_into(model, ckpt)
    elif stages == [2] and not args.cold_start:
        raise UserError("--stage 2 needs --init <stage-1 checkpoint> or --cold-start")

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    summary = {"config_digest": config.digest(), "stages": []}
    for stage in stages:
        is_final = stage == stages[-1]
        ckpt_path = str(out) if is_final else f"{out}.stage{stage}"
        result = train_stage(model, dataset, stage,
                             steps=args.steps,
                             log_path=f"{out}.stage{stage}.loss.csv",
                             checkpoint_path=ckpt_path)
        summary["stages"].append({"stage": stage, "steps": result.steps,
                                  "final_loss": result.final_loss,
                                  "seconds": round(result.seconds, 3),
                                  "checkpoint": ckpt_path})
    print(canonical_json(summary))
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    model = restore_model(ckpt)
    data_dir = args.data or model.config.data_dir
    dataset = _load_dataset(data_dir)
    if dataset.vocab.digest() != model.vocab.digest():
        raise UserError("checkpoint vocabulary does not match the dataset")
    use_traj = model.config.use_trajectory and not args.no_trajectory
    scores, labels = score_split(model, dataset, args.split, use_trajectory=use_traj)
    report = evaluate(scores, labels, dataset.vocab)
    payload = {
        "split": args.split,
        "use_trajectory": use_traj,
        "config_digest": model.config.digest(),
        "checkpoint": {"stage": ckpt.stage, "step": ckpt.step},
        "dataset_digest": dataset.manifest["digest"],
        "metrics": report.to_dict(),
    }
    if args.report:
        Path(args.report).parent.mkdir(parents=True, exist_ok=True)
        Path(args.report).write_text(canonical_json(payload) + "\n", encoding="utf-8")
    if args.scores:
        save_matrix(args.scores, scores)
        save_matrix(f"{args.scores}_labels", labels)
    print(format_report(report))
    print(f"config {model.config.digest()[:12]}  split {args.split}  "
          f"trajectory {'on' if use_traj else 'off'}")
    return EXIT_OK


def cmd_heatmap(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    model = restore_model(ckpt)
    dataset = _load_dataset(args.data or model.config.data_dir)
    if dataset.vocab.digest() != model.vocab.digest():
        raise UserError("checkpoint vocabulary does not match the dataset")
    names = args.triplet.split()
    if len(names) != 3:
        raise UserError(f"--triplet needs 'instrument verb target', got {args.triplet!r}")
    vocab = dataset.vocab
    try:
        trip = (vocab.instruments.index(names[0]), vocab.verbs.index(names[1]),
                vocab.targets.index(names[2]))
        class_id = vocab.class_index(trip)
    except (ValueError, KeyError) as err:
        raise UserError(f"unknown triplet {args.triplet!r}: {err}") from err
    clip = dataset.clip(args.clip)
    sidecar = save_heatmaps(args.out, model, clip, dataset.tracks(args.clip), class_id)
    print(canonical_json({"out": str(args.out), "units": sidecar["units"],
                          "top5": sidecar["top5"],
                          "missing_boxes": sidecar["missing_boxes"]}))
    return EXIT_OK


def cmd_selfcheck(_args) -> int:
    failures = 0
    for check in run_all():
        print(json.dumps(check, sort_keys=True))
        if check["status"] != "pass":
            failures += 1
    return EXIT_OK if failures == 0 else EXIT_INTERNAL


def main(argv: list[str] | None = None) -> int:
    _apply_thread_cap()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        handler = {"gen-data": cmd_gen_data, "train": cmd_train, "eval": cmd_eval,
                   "heatmap": cmd_heatmap, "selfcheck": cmd_selfcheck}[args.cmd]
        return handler(args)
    except UserError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USER
    except _INTERNAL_ERRORS as e:
        print(f"internal error: {e!r}", file=sys.stderr)
        return EXIT_INTERNAL
    except _USER_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USER


if __name__ == "__main__":
    sys.exit(main())
