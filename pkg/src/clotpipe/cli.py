"""Command-line orchestration of the slide classification pipeline.

Subcommands mirror the pipeline stages; `run-all` chains them end to end.
Defaults come from the published operating points (600px tiles, >30%
content rule, stage-1 at 128px, resize 256, AdamW lr 3e-4, ...); a JSON
config file overrides defaults and command-line flags override both.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import WORKERS_ENV_VAR, RunConfig, SynthConfig
from .pipeline import (
    evaluate_run,
    features_run,
    filter_run,
    predict_run,
    run_all,
    split_run,
    synth_run,
    tile_run,
    train_bg_run,
    train_clot_run,
    write_reports,
)

log = logging.getLogger("clotpipe")


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None,
                        help="JSON config file; flags override its values")
    parser.add_argument("--output-dir", type=Path, default=None,
                        help="pipeline state directory (default: run)")
    parser.add_argument("--seed", type=int, default=None,
                        help="global seed; all stage and tile seeds derive from it")
    parser.add_argument("--workers", type=int, default=None,
                        help=f"worker count (default: ${WORKERS_ENV_VAR} or 1)")


def _effective_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = {}
    if args.output_dir is not None:
        overrides["output_dir"] = str(args.output_dir)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.workers is not None:
        overrides["workers"] = max(1, args.workers)
    for name in ("tile_size", "stride", "edge_policy", "min_content_ratio",
                 "stage1_threshold", "aggregation"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    if getattr(args, "no_patches", False):
        overrides["save_patches"] = False
    synth_overrides = {}
    for flag, field in (("slides_per_class", "slides_per_class"),
                        ("slide_width", "slide_width"),
                        ("slide_height", "slide_height"),
                        ("blob_count", "blob_count")):
        value = getattr(args, flag, None)
        if value is not None:
            synth_overrides[field] = value
    if getattr(args, "classes", None) is not None:
        synth_overrides["classes"] = tuple(args.classes.split(","))
    if getattr(args, "blob_radius", None) is not None:
        lo, hi = (int(v) for v in args.blob_radius.split(","))
        synth_overrides["blob_radius"] = (lo, hi)
    if synth_overrides:
        overrides["synth"] = SynthConfig(**{**cfg.synth.__dict__, **synth_overrides})
    return cfg.replace(**overrides) if overrides else cfg


def _cmd_synth(args) -> int:
    cfg = _effective_config(args)
    Path(cfg.output_dir).mkdir(parents=True, exist_ok=True)
    labels = synth_run(cfg)
    print(f"wrote {labels}")
    return 0


def _cmd_tile(args) -> int:
    cfg = _effective_config(args)
    manifest = tile_run(cfg, args.labels)
    print(f"wrote {manifest}")
    return 0


def _cmd_filter(args) -> int:
    cfg = _effective_config(args)
    manifest = filter_run(cfg, args.manifest, args.stage1_model, args.stage1_features)
    print(f"updated {manifest}")
    return 0


def _cmd_features(args) -> int:
    cfg = _effective_config(args)
    path = features_run(cfg, args.stage, args.manifest, args.labels)
    print(f"wrote {path}")
    return 0


def _cmd_train_bg(args) -> int:
    cfg = _effective_config(args)
    path = train_bg_run(cfg, args.features, args.split)
    print(f"wrote {path}")
    return 0


def _cmd_train_clot(args) -> int:
    cfg = _effective_config(args)
    path = train_clot_run(cfg, args.features, args.split)
    print(f"wrote {path}")
    return 0


def _cmd_predict(args) -> int:
    cfg = _effective_config(args)
    path = predict_run(cfg, args.model, args.features, args.manifest)
    print(f"wrote {path}")
    return 0


def _cmd_evaluate(args) -> int:
    cfg = _effective_config(args)
    levels = ("tile", "slide") if args.level == "both" else (args.level,)
    weights = [float(v) for v in args.class_weights.split(",")] \
        if args.class_weights else None
    reports = evaluate_run(cfg, args.scores, args.manifest, args.labels,
                           args.split, args.split_name, levels,
                           model_name=args.model_name, class_weights=weights)
    json_path, _ = write_reports(Path(cfg.output_dir), reports)
    from .metrics import render_report_table

    print(render_report_table(reports))
    print(f"wrote {json_path}")
    return 0


def _cmd_split(args) -> int:
    cfg = _effective_config(args)
    path = split_run(cfg, args.labels)
    print(f"wrote {path}")
    return 0


def _cmd_run_all(args) -> int:
    cfg = _effective_config(args)
    if not args.synthetic and args.labels is None:
        print("run-all needs --synthetic or --labels <labels.csv>", file=sys.stderr)
        return 2
    from .metrics import render_report_table

    reports = run_all(cfg, labels_path=args.labels, eval_split=args.eval_split)
    print(render_report_table(reports))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="clotpipe",
        description="Whole-slide tiling, content filtering, two-stage clot "
                    "origin classification, and evaluation.",
    )
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="INFO-level progress logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic labeled slides")
    _add_common(p)
    p.add_argument("--slides-per-class", dest="slides_per_class", type=int,
                   default=None, help="slides per class (default 10)")
    p.add_argument("--classes", default=None,
                   help="comma-separated class labels (default CE,LAA)")
    p.add_argument("--slide-width", dest="slide_width", type=int, default=None,
                   help="slide width in px (default 1800)")
    p.add_argument("--slide-height", dest="slide_height", type=int, default=None,
                   help="slide height in px (default 1200)")
    p.add_argument("--blob-count", dest="blob_count", type=int, default=None,
                   help="tissue blobs per slide (default 4)")
    p.add_argument("--blob-radius", dest="blob_radius", default=None,
                   help="blob radius range MIN,MAX in px (default 250,380)")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("tile", help="extract the 600x600 tile grid of each slide")
    _add_common(p)
    p.add_argument("--labels", type=Path, default=None,
                   help="labels.csv (default <output-dir>/labels.csv)")
    p.add_argument("--tile-size", dest="tile_size", type=int, default=None,
                   help="tile edge in px (default 600)")
    p.add_argument("--stride", type=int, default=None,
                   help="grid stride in px (default 600: no overlap)")
    p.add_argument("--edge-policy", dest="edge_policy",
                   choices=("drop", "pad"), default=None,
                   help="edge tiles: drop (default) or pad with white")
    p.add_argument("--no-patches", action="store_true",
                   help="skip writing patch PNGs (manifest only)")
    p.set_defaults(func=_cmd_tile)

    p = sub.add_parser("filter",
                       help="apply the >30%% content rule (and stage-1 model if given)")
    _add_common(p)
    p.add_argument("--manifest", type=Path, default=None,
                   help="tile manifest (default <output-dir>/tiles/manifest.jsonl)")
    p.add_argument("--min-content-ratio", dest="min_content_ratio", type=float,
                   default=None,
                   help="keep tiles with content ratio strictly above (default 0.30)")
    p.add_argument("--stage1-model", dest="stage1_model", type=Path, default=None,
                   help="background/cellular model JSON; discards background tiles")
    p.add_argument("--stage1-features", dest="stage1_features", type=Path,
                   default=None, help="stage-1 feature CSV (default in output dir)")
    p.add_argument("--stage1-threshold", dest="stage1_threshold", type=float,
                   default=None,
                   help="discard when P(cellular) below this (default 0.5)")
    p.set_defaults(func=_cmd_filter)

    p = sub.add_parser("features", help="extract per-tile feature descriptors")
    _add_common(p)
    p.add_argument("--stage", type=int, choices=(1, 2), required=True,
                   help="1: 128px descriptors of all tiles; 2: 256px of kept tiles")
    p.add_argument("--manifest", type=Path, default=None)
    p.add_argument("--labels", type=Path, default=None,
                   help="labels.csv for masks/class labels")
    p.set_defaults(func=_cmd_features)

    p = sub.add_parser("train-bg", help="train the stage-1 background classifier")
    _add_common(p)
    p.add_argument("--features", type=Path, default=None,
                   help="stage-1 feature CSV (default in output dir)")
    p.add_argument("--split", type=Path, default=None,
                   help="splits.json (default in output dir)")
    p.set_defaults(func=_cmd_train_bg)

    p = sub.add_parser("train-clot", help="train the stage-2 CE/LAA classifier")
    _add_common(p)
    p.add_argument("--features", type=Path, default=None,
                   help="stage-2 feature CSV (default in output dir)")
    p.add_argument("--split", type=Path, default=None)
    p.set_defaults(func=_cmd_train_clot)

    p = sub.add_parser("predict", help="write stage-2 probabilities for kept tiles")
    _add_common(p)
    p.add_argument("--model", type=Path, default=None,
                   help="stage-2 model JSON (default <output-dir>/models/stage2.json)")
    p.add_argument("--features", type=Path, default=None)
    p.add_argument("--manifest", type=Path, default=None)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("evaluate",
                       help="WMCLL/accuracy/precision/recall/F1 report from tile scores")
    _add_common(p)
    p.add_argument("--scores", type=Path, default=None,
                   help="tile score CSV; ours or any external model's "
                        "(default <output-dir>/predictions.csv)")
    p.add_argument("--manifest", type=Path, default=None)
    p.add_argument("--labels", type=Path, default=None)
    p.add_argument("--split", type=Path, default=None, help="splits.json path")
    p.add_argument("--split-name", dest="split_name", default=None,
                   choices=("train", "validation", "test"),
                   help="restrict evaluation to one split (default: all slides)")
    p.add_argument("--level", choices=("tile", "slide", "both"), default="both",
                   help="evaluation granularity (default both)")
    p.add_argument("--aggregation", choices=("mean", "majority", "max_confidence"),
                   default=None,
                   help="tile-to-slide rule (default mean)")
    p.add_argument("--class-weights", dest="class_weights", default=None,
                   help="comma-separated per-class loss weights (default all 1)")
    p.add_argument("--model-name", dest="model_name", default=None,
                   help="name for the report row (default: scores file stem)")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("split", help="stratified train/validation/test assignment")
    _add_common(p)
    p.add_argument("--labels", type=Path, default=None)
    p.set_defaults(func=_cmd_split)

    p = sub.add_parser("run-all", help="run the whole pipeline end to end")
    _add_common(p)
    p.add_argument("--synthetic", action="store_true",
                   help="generate synthetic slides first")
    p.add_argument("--labels", type=Path, default=None,
                   help="existing labels.csv instead of --synthetic")
    p.add_argument("--slides-per-class", dest="slides_per_class", type=int,
                   default=None)
    p.add_argument("--eval-split", dest="eval_split", default="test",
                   choices=("train", "validation", "test", "all"),
                   help="which split the final report scores (default test)")
    p.add_argument("--aggregation", choices=("mean", "majority", "max_confidence"),
                   default=None)
    p.set_defaults(func=_cmd_run_all)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if getattr(args, "eval_split", None) == "all":
        args.eval_split = None
    try:
        return args.func(args)
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
