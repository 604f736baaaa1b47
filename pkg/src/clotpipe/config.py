"""Run configuration: every knob of the pipeline in one serializable object.

Defaults carry the published operating points: 600x600 tiles, the >30%
content rule, stage-1 inputs at 128x128 and stage-2 at 256x256, resize to
256 with ImageNet normalization, 50% per-op augmentation probability with
sharpness factor 2 and brightness/hue/saturation jitter 0.2/0.5/0.5, and
AdamW at initial learning rate 3e-4.

Precedence: built-in defaults < config file < command-line flags. Every
command writes the effective config next to its outputs so a run can be
reproduced bit for bit. Worker counts fall back to the CLOTPIPE_WORKERS
environment variable.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .augment import AugmentationConfig
from .metrics import DEFAULT_SPLIT_RATIOS
from .trainer import EarlyStopConfig, SwaConfig, TrainConfig

WORKERS_ENV_VAR = "CLOTPIPE_WORKERS"


def default_workers() -> int:
    value = os.environ.get(WORKERS_ENV_VAR, "")
    try:
        return max(1, int(value))
    except ValueError:
        return 1


@dataclass(frozen=True)
class SynthConfig:
    """Synthetic dataset shape for desk-scale runs."""

    slides_per_class: int = 10
    classes: tuple[str, ...] = ("CE", "LAA")
    slide_width: int = 1800
    slide_height: int = 1200
    blob_count: int = 4
    blob_radius: tuple[int, int] = (250, 380)


@dataclass(frozen=True)
class RunConfig:
    output_dir: str = "run"
    seed: int = 0
    workers: int = field(default_factory=default_workers)

    # tiling
    tile_size: int = 600
    stride: int = 600
    edge_policy: str = "drop"
    save_patches: bool = True
    record_dropped_edges: bool = True

    # content filter
    min_content_ratio: float = 0.30

    # two-stage classification
    stage1_input_size: int = 128
    stage2_input_size: int = 256
    stage1_threshold: float = 0.5
    cellular_mask_threshold: float = 0.05  # mask coverage that labels a tile cellular
    aggregation: str = "mean"

    split_ratios: tuple[float, float, float] = DEFAULT_SPLIT_RATIOS

    synth: SynthConfig = SynthConfig()
    augmentation: AugmentationConfig = AugmentationConfig()
    train: TrainConfig = TrainConfig()

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "RunConfig":
        obj = dict(obj)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "synth" in obj and isinstance(obj["synth"], dict):
            synth = dict(obj["synth"])
            for key in ("classes", "blob_radius"):
                if key in synth:
                    synth[key] = tuple(synth[key])
            obj["synth"] = SynthConfig(**synth)
        if "augmentation" in obj and isinstance(obj["augmentation"], dict):
            aug = dict(obj["augmentation"])
            for key in ("normalize_mean", "normalize_std"):
                if key in aug:
                    aug[key] = tuple(aug[key])
            obj["augmentation"] = AugmentationConfig(**aug)
        if "train" in obj and isinstance(obj["train"], dict):
            tr = dict(obj["train"])
            if isinstance(tr.get("early_stop"), dict):
                tr["early_stop"] = EarlyStopConfig(**tr["early_stop"])
            if isinstance(tr.get("swa"), dict):
                tr["swa"] = SwaConfig(**tr["swa"])
            if tr.get("class_weights") is not None:
                tr["class_weights"] = tuple(tr["class_weights"])
            obj["train"] = TrainConfig(**tr)
        for key in ("split_ratios",):
            if key in obj and obj[key] is not None:
                obj[key] = tuple(obj[key])
        return cls(**obj)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        with open(tmp, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, path)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)
