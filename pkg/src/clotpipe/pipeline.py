"""Stage orchestration: the full slide-to-verdict flow behind the CLI.

Pipeline state lives in flat files under one output directory, inspectable
and resumable per stage:

    slides/               synthetic slides + sidecar masks (PNG)
    labels.csv            slide_id,path,mask_path,label
    splits.json           slide_id -> train/validation/test
    tiles/manifest.jsonl  one TileRecord per line
    tiles/patches/        <slide_id>_x<x>_y<y>.png
    features_stage1.csv   128px descriptors, background/cellular labels
    features_stage2.csv   256px descriptors, CE/LAA labels
    models/stage{1,2}.json
    predictions.csv       per-tile stage-2 probabilities
    report.json/.txt      evaluation output

Every stage rewrites its outputs atomically and drops a config.json of the
effective parameters next to them.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import os
import shutil
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Sequence

import numpy as np

from . import png_codec
from .augment import resize
from .classifier import (
    STAGE1_CLASSES,
    STAGE2_CLASSES,
    LinearModel,
    aggregate_slide,
    load_external_scores,
    predict_proba_batch,
    stage1_filter,
    write_scores,
)
from .config import RunConfig
from .features import extract_features, read_feature_csv, write_feature_csv
from .metrics import (
    EvalReport,
    SplitAssignment,
    evaluate,
    render_report_table,
    split_dataset,
)
from .otsu_filter import apply_content_filter, tile_content
from .seeding import derive_seed
from .slide_io import MaskImage, SlideImage, open_mask, open_slide
from .synthetic import SyntheticSlideConfig, generate_synthetic_slide
from .tiler import (
    TileRecord,
    TileSpec,
    dropped_edge_specs,
    plan_tiles,
    process_tiles,
    read_manifest,
    write_manifest,
)
from .trainer import train, write_history_csv

log = logging.getLogger("clotpipe")


# -- small file helpers --------------------------------------------------------


def write_labels_csv(path: Path, rows: list[dict]) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["slide_id", "path", "mask_path", "label"])
        for row in rows:
            writer.writerow([row["slide_id"], row["path"],
                             row.get("mask_path") or "", row["label"]])
    os.replace(tmp, path)


def read_labels_csv(path: str | Path) -> list[dict]:
    path = Path(path)
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["slide_id", "path", "mask_path", "label"]:
            raise ValueError(f"unexpected labels CSV header: {header}")
        for rec in reader:
            rows.append({
                "slide_id": rec[0],
                "path": str((path.parent / rec[1])) if rec[1] else "",
                "mask_path": str((path.parent / rec[2])) if rec[2] else None,
                "label": rec[3],
            })
    return rows


def _write_effective_config(cfg: RunConfig, out_dir: Path) -> None:
    cfg.save(out_dir / "config.json")


# -- synth ----------------------------------------------------------------------


def synth_run(cfg: RunConfig) -> Path:
    """Generate slides_per_class slides per class plus the labels manifest."""
    out_dir = Path(cfg.output_dir)
    slide_dir = out_dir / "slides"
    slide_dir.mkdir(parents=True, exist_ok=True)
    _write_effective_config(cfg, out_dir)
    rows = []
    for label in cfg.synth.classes:
        for k in range(cfg.synth.slides_per_class):
            slide_id = f"{label}_{k:03d}"
            slide_path = slide_dir / f"{slide_id}.png"
            mask_path = slide_dir / f"{slide_id}_mask.png"
            config = SyntheticSlideConfig(
                width_px=cfg.synth.slide_width,
                height_px=cfg.synth.slide_height,
                class_label=label,
                blob_count=cfg.synth.blob_count,
                blob_radius_px=cfg.synth.blob_radius,
                seed=derive_seed(cfg.seed, "synth", slide_id),
            )
            generate_synthetic_slide(config, slide_path, mask_path, slide_id)
            rows.append({
                "slide_id": slide_id,
                "path": os.path.relpath(slide_path, out_dir),
                "mask_path": os.path.relpath(mask_path, out_dir),
                "label": label,
            })
            log.info("synth: wrote %s (%s)", slide_path.name, label)
    labels_path = out_dir / "labels.csv"
    write_labels_csv(labels_path, rows)
    return labels_path


# -- tiling ----------------------------------------------------------------------


def _tile_one_slide(slide: SlideImage, label: str | None, cfg: RunConfig,
                    patches_dir: Path | None) -> list[TileRecord]:
    specs = plan_tiles(slide, cfg.tile_size, cfg.stride, cfg.edge_policy)

    def tile_fn(spec: TileSpec, tile: np.ndarray) -> TileRecord:
        valid = (spec.height, spec.width) if spec.padded else None
        otsu, ratio = tile_content(tile, valid_size=valid)
        patch_rel = None
        if patches_dir is not None:
            name = spec.patch_name()
            data = png_codec.encode_png(tile)
            tmp = patches_dir / (name + ".tmp")
            with open(tmp, "wb") as fh:
                fh.write(data)
            os.replace(tmp, patches_dir / name)
            patch_rel = name
        return TileRecord(spec=spec, content_ratio=ratio, label=label,
                          patch_path=patch_rel)

    records = process_tiles(slide, specs, tile_fn, workers=cfg.workers)
    if cfg.edge_policy == "drop" and cfg.record_dropped_edges:
        for spec in dropped_edge_specs(slide, cfg.tile_size, cfg.stride):
            records.append(TileRecord(spec=spec, kept=False,
                                      discard_reason="partial_edge", label=label))
    return records


def tile_run(cfg: RunConfig, labels_path: str | Path | None = None) -> Path:
    """Extract the tile grid of every slide and write the manifest."""
    out_dir = Path(cfg.output_dir)
    labels_path = Path(labels_path) if labels_path else out_dir / "labels.csv"
    slides = read_labels_csv(labels_path)
    tiles_dir = out_dir / "tiles"
    tiles_dir.mkdir(parents=True, exist_ok=True)
    _write_effective_config(cfg, out_dir)

    patches_final = tiles_dir / "patches" if cfg.save_patches else None
    patches_tmp = tiles_dir / "patches.tmp" if cfg.save_patches else None
    if patches_tmp is not None:
        if patches_tmp.exists():
            shutil.rmtree(patches_tmp)
        patches_tmp.mkdir(parents=True)

    records: list[TileRecord] = []
    try:
        for row in slides:
            slide = open_slide(row["path"], row["slide_id"])
            slide_records = _tile_one_slide(slide, row["label"], cfg, patches_tmp)
            records.extend(slide_records)
            log.info("tile: %s -> %d tiles", row["slide_id"], len(slide_records))
    except Exception:
        if patches_tmp is not None and patches_tmp.exists():
            shutil.rmtree(patches_tmp)
        raise

    if patches_tmp is not None:
        if patches_final.exists():
            shutil.rmtree(patches_final)
        os.replace(patches_tmp, patches_final)
        for record in records:
            if record.patch_path is not None:
                record.patch_path = str(Path("patches") / record.patch_path)

    manifest_path = tiles_dir / "manifest.jsonl"
    write_manifest(manifest_path, records)
    return manifest_path


def resolve_patch_path(manifest_path: Path, record: TileRecord) -> Path | None:
    if record.patch_path is None:
        return None
    return manifest_path.parent / record.patch_path


# -- content + stage-1 filtering ---------------------------------------------------


def filter_run(cfg: RunConfig, manifest_path: str | Path | None = None,
               stage1_model_path: str | Path | None = None,
               stage1_features_path: str | Path | None = None) -> Path:
    """Apply the content rule (always) and the stage-1 model (when given)."""
    out_dir = Path(cfg.output_dir)
    manifest_path = Path(manifest_path) if manifest_path \
        else out_dir / "tiles" / "manifest.jsonl"
    if not manifest_path.is_file():
        raise FileNotFoundError(f"missing tile manifest: {manifest_path} (run tile first)")
    records = read_manifest(manifest_path, cfg.tile_size)
    records = apply_content_filter(records, cfg.min_content_ratio)

    if stage1_model_path is not None:
        model = LinearModel.load(stage1_model_path)
        features_path = Path(stage1_features_path) if stage1_features_path \
            else out_dir / "features_stage1.csv"
        if not features_path.is_file():
            raise FileNotFoundError(
                f"missing stage-1 features: {features_path} (run features first)"
            )
        feats = {(r["slide_id"], r["x"], r["y"]): r["features"]
                 for r in read_feature_csv(features_path)}
        records = stage1_filter(records, feats, model, cfg.stage1_threshold)

    _write_effective_config(cfg, out_dir)
    write_manifest(manifest_path, records)
    return manifest_path


# -- features -----------------------------------------------------------------------


def _stage1_label(mask: MaskImage | None, record: TileRecord,
                  cellular_threshold: float) -> str | None:
    if mask is None:
        return None
    s = record.spec
    region = mask.read_region(s.x, s.y, s.width, s.height)
    coverage = region.sum() / (s.tile_size * s.tile_size)
    return "cellular" if coverage > cellular_threshold else "background"


def features_run(cfg: RunConfig, stage: int,
                 manifest_path: str | Path | None = None,
                 labels_path: str | Path | None = None) -> Path:
    """Extract per-tile descriptors at the stage's input size.

    Stage 1 covers every extracted tile and labels it background/cellular
    from the ground-truth mask (when present); stage 2 covers kept tiles
    and inherits the slide's class label.
    """
    if stage not in (1, 2):
        raise ValueError("stage must be 1 or 2")
    out_dir = Path(cfg.output_dir)
    manifest_path = Path(manifest_path) if manifest_path \
        else out_dir / "tiles" / "manifest.jsonl"
    if not manifest_path.is_file():
        raise FileNotFoundError(f"missing tile manifest: {manifest_path} (run tile first)")
    labels_path = Path(labels_path) if labels_path else out_dir / "labels.csv"
    masks: dict[str, MaskImage | None] = {}
    if stage == 1 and labels_path.is_file():
        for row in read_labels_csv(labels_path):
            masks[row["slide_id"]] = (
                open_mask(row["mask_path"]) if row["mask_path"] else None
            )

    records = read_manifest(manifest_path, cfg.tile_size)
    size = cfg.stage1_input_size if stage == 1 else cfg.stage2_input_size
    if stage == 1:
        todo = [r for r in records if r.patch_path is not None
                and r.content_ratio is not None]
    else:
        todo = [r for r in records if r.kept and r.patch_path is not None]

    def one(record: TileRecord) -> dict:
        patch = png_codec.read_full(resolve_patch_path(manifest_path, record))
        feats = extract_features(resize(patch, size), record.content_ratio)
        if stage == 1:
            label = _stage1_label(masks.get(record.spec.slide_id), record,
                                  cfg.cellular_mask_threshold)
        else:
            label = record.label
        return {"slide_id": record.spec.slide_id, "x": record.spec.x,
                "y": record.spec.y, "features": feats, "label": label}

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            rows = list(pool.map(one, todo))
    else:
        rows = [one(r) for r in todo]

    _write_effective_config(cfg, out_dir)
    features_path = out_dir / f"features_stage{stage}.csv"
    write_feature_csv(features_path, rows)
    return features_path


# -- training -------------------------------------------------------------------------


def _split_features(rows: list[dict], split: SplitAssignment, class_set
                    ) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Feature matrix and label-index vector per split name."""
    grouped: dict[str, tuple[list, list]] = {name: ([], []) for name in
                                             ("train", "validation", "test")}
    for row in rows:
        if row["label"] is None or row["label"] not in class_set.labels:
            continue
        name = split.assignment.get(row["slide_id"])
        if name is None:
            continue
        grouped[name][0].append(row["features"])
        grouped[name][1].append(class_set.index(row["label"]))
    from .features import N_FEATURES

    return {
        name: (np.array(X, dtype=np.float64) if X
               else np.zeros((0, N_FEATURES)),
               np.array(y, dtype=np.intp))
        for name, (X, y) in grouped.items()
    }


def _train_stage(cfg: RunConfig, stage: int, features_path: Path,
                 split_path: Path) -> Path:
    class_set = STAGE1_CLASSES if stage == 1 else STAGE2_CLASSES
    stage_name = f"stage{stage}"
    rows = read_feature_csv(features_path)
    split = SplitAssignment.load(split_path)
    parts = _split_features(rows, split, class_set)
    X_train, y_train = parts["train"]
    X_val, y_val = parts["validation"]
    if len(X_val) == 0:  # tiny runs: fall back to training data for monitoring
        X_val, y_val = X_train, y_train
    train_cfg = dataclasses.replace(cfg.train,
                                    seed=derive_seed(cfg.seed, "train", stage_name))
    model, history = train(X_train, y_train, X_val, y_val, train_cfg, class_set)
    out_dir = Path(cfg.output_dir)
    models_dir = out_dir / "models"
    models_dir.mkdir(parents=True, exist_ok=True)
    model_path = models_dir / f"{stage_name}.json"
    model.save(model_path)
    write_history_csv(out_dir / f"history_{stage_name}.csv", history)
    _write_effective_config(cfg, out_dir)
    log.info("train %s: %d epochs, val WMCLL %.4f", stage_name,
             history[-1].epoch, model.metadata["final_val_wmcll"])
    return model_path


def train_bg_run(cfg: RunConfig, features_path: str | Path | None = None,
                 split_path: str | Path | None = None) -> Path:
    out_dir = Path(cfg.output_dir)
    features_path = Path(features_path) if features_path \
        else out_dir / "features_stage1.csv"
    split_path = Path(split_path) if split_path else out_dir / "splits.json"
    for path, hint in ((features_path, "features --stage 1"), (split_path, "split")):
        if not Path(path).is_file():
            raise FileNotFoundError(f"missing {path} (run {hint} first)")
    return _train_stage(cfg, 1, features_path, split_path)


def train_clot_run(cfg: RunConfig, features_path: str | Path | None = None,
                   split_path: str | Path | None = None) -> Path:
    out_dir = Path(cfg.output_dir)
    features_path = Path(features_path) if features_path \
        else out_dir / "features_stage2.csv"
    split_path = Path(split_path) if split_path else out_dir / "splits.json"
    for path, hint in ((features_path, "features --stage 2"), (split_path, "split")):
        if not Path(path).is_file():
            raise FileNotFoundError(f"missing {path} (run {hint} first)")
    return _train_stage(cfg, 2, features_path, split_path)


# -- split ------------------------------------------------------------------------------


def split_run(cfg: RunConfig, labels_path: str | Path | None = None) -> Path:
    out_dir = Path(cfg.output_dir)
    labels_path = Path(labels_path) if labels_path else out_dir / "labels.csv"
    if not labels_path.is_file():
        raise FileNotFoundError(f"missing {labels_path} (run synth or provide labels)")
    slides = [(row["slide_id"], row["label"]) for row in read_labels_csv(labels_path)]
    assignment = split_dataset(slides, cfg.split_ratios,
                               seed=derive_seed(cfg.seed, "split"))
    split_path = out_dir / "splits.json"
    _write_effective_config(cfg, out_dir)
    assignment.save(split_path)
    return split_path


# -- prediction ---------------------------------------------------------------------------


def predict_run(cfg: RunConfig, model_path: str | Path | None = None,
                features_path: str | Path | None = None,
                manifest_path: str | Path | None = None) -> Path:
    """Stage-2 probabilities for every kept tile, as a score CSV."""
    out_dir = Path(cfg.output_dir)
    model_path = Path(model_path) if model_path else out_dir / "models" / "stage2.json"
    features_path = Path(features_path) if features_path \
        else out_dir / "features_stage2.csv"
    manifest_path = Path(manifest_path) if manifest_path \
        else out_dir / "tiles" / "manifest.jsonl"
    for path, hint in ((model_path, "train-clot"), (features_path, "features --stage 2"),
                       (manifest_path, "tile")):
        if not Path(path).is_file():
            raise FileNotFoundError(f"missing {path} (run {hint} first)")

    model = LinearModel.load(model_path)
    rows = read_feature_csv(features_path)
    kept = {r.spec.key for r in read_manifest(manifest_path, cfg.tile_size) if r.kept}
    rows = [r for r in rows if (r["slide_id"], r["x"], r["y"]) in kept]
    if rows:
        probs = predict_proba_batch(model, np.array([r["features"] for r in rows]))
    else:
        probs = np.zeros((0, len(model.class_set.labels)))
    out_rows = [(r["slide_id"], r["x"], r["y"], probs[i])
                for i, r in enumerate(rows)]
    predictions_path = out_dir / "predictions.csv"
    _write_effective_config(cfg, out_dir)
    write_scores(predictions_path, model.class_set.labels, out_rows)
    return predictions_path


# -- evaluation ---------------------------------------------------------------------------


def evaluate_run(cfg: RunConfig, scores_path: str | Path | None = None,
                 manifest_path: str | Path | None = None,
                 labels_path: str | Path | None = None,
                 split_path: str | Path | None = None,
                 split_name: str | None = None,
                 levels: Sequence[str] = ("tile", "slide"),
                 model_name: str | None = None,
                 class_weights: Sequence[float] | None = None
                 ) -> list[EvalReport]:
    """Score predictions at tile and/or slide level and write the report.

    `scores_path` may be our own predictions or any external model's tile
    probabilities; no trained model is needed here.
    """
    out_dir = Path(cfg.output_dir)
    scores_path = Path(scores_path) if scores_path else out_dir / "predictions.csv"
    manifest_path = Path(manifest_path) if manifest_path \
        else out_dir / "tiles" / "manifest.jsonl"
    labels_path = Path(labels_path) if labels_path else out_dir / "labels.csv"
    for path, hint in ((scores_path, "predict (or pass --scores)"),
                       (manifest_path, "tile"), (labels_path, "synth")):
        if not Path(path).is_file():
            raise FileNotFoundError(f"missing {path} (run {hint} first)")

    scores, classes = load_external_scores(scores_path)
    slide_labels = {row["slide_id"]: row["label"]
                    for row in read_labels_csv(labels_path)}
    records = [r for r in read_manifest(manifest_path, cfg.tile_size) if r.kept]

    allowed_slides = None
    if split_name is not None:
        split_file = Path(split_path) if split_path else out_dir / "splits.json"
        allowed_slides = set(SplitAssignment.load(split_file).slides(split_name))
        records = [r for r in records if r.spec.slide_id in allowed_slides]
    if not records:
        where = f"split {split_name!r}" if split_name else "the manifest"
        raise ValueError(f"no kept tiles to evaluate in {where}")

    missing = [r.spec.key for r in records if r.spec.key not in scores]
    if missing:
        preview = ", ".join(map(str, missing[:10]))
        raise ValueError(
            f"{len(missing)} kept tile(s) lack predictions: {preview}"
            + ("..." if len(missing) > 10 else "")
        )

    name = model_name or scores_path.stem
    weights = np.asarray(class_weights, dtype=np.float64) \
        if class_weights is not None else None
    reports = []
    class_index = {c: i for i, c in enumerate(classes)}
    if "tile" in levels:
        labeled = [r for r in records if r.label in class_index]
        y_true = [class_index[r.label] for r in labeled]
        probs = np.array([scores[r.spec.key] for r in labeled])
        if labeled:
            reports.append(evaluate(y_true, probs, classes, weights,
                                    level="tile", model_name=name))
    if "slide" in levels:
        by_slide: dict[str, list[np.ndarray]] = {}
        for r in records:
            by_slide.setdefault(r.spec.slide_id, []).append(scores[r.spec.key])
        slide_ids = sorted(s for s in by_slide if slide_labels.get(s) in class_index)
        y_true = [class_index[slide_labels[s]] for s in slide_ids]
        probs = np.array([aggregate_slide(by_slide[s], cfg.aggregation)
                          for s in slide_ids])
        if slide_ids:
            reports.append(evaluate(y_true, probs, classes, weights,
                                    level="slide", model_name=name))
    return reports


def write_reports(out_dir: Path, reports: Sequence[EvalReport]) -> tuple[Path, Path]:
    import json

    json_path = out_dir / "report.json"
    tmp = json_path.with_name(json_path.name + ".tmp")
    with open(tmp, "w") as fh:
        json.dump([rep.to_dict() for rep in reports], fh, indent=2)
        fh.write("\n")
    os.replace(tmp, json_path)

    text_path = out_dir / "report.txt"
    tmp = text_path.with_name(text_path.name + ".tmp")
    with open(tmp, "w") as fh:
        fh.write(render_report_table(reports))
        fh.write("\n")
    os.replace(tmp, text_path)
    return json_path, text_path


# -- end to end -----------------------------------------------------------------------------


def run_all(cfg: RunConfig, labels_path: str | Path | None = None,
            eval_split: str | None = "test") -> list[EvalReport]:
    """synth-or-input -> tile -> filter -> stage-1 -> features -> train ->
    predict -> aggregate -> evaluate, returning the final reports."""
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if labels_path is None:
        labels_path = synth_run(cfg)
    split_path = split_run(cfg, labels_path)
    manifest_path = tile_run(cfg, labels_path)
    filter_run(cfg, manifest_path)  # content rule
    features_run(cfg, 1, manifest_path, labels_path)
    stage1_model = train_bg_run(cfg, split_path=split_path)
    filter_run(cfg, manifest_path, stage1_model_path=stage1_model)
    features_run(cfg, 2, manifest_path, labels_path)
    train_clot_run(cfg, split_path=split_path)
    predictions = predict_run(cfg, manifest_path=manifest_path)
    reports = evaluate_run(cfg, predictions, manifest_path, labels_path,
                           split_path, split_name=eval_split)
    write_reports(out_dir, reports)
    return reports
