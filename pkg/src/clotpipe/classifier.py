"""Linear softmax classifiers, external score import, and slide aggregation.

Stage 1 separates background from cellular tiles, stage 2 assigns clot
origin (CE vs LAA). Models are plain affine maps over the 11-value feature
descriptor; per-tile probabilities from any external model can be dropped
in through the score CSV instead.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .errors import LayoutMismatchError, ScoreFormatError
from .features import LAYOUT_VERSION, N_FEATURES


class ClassSet(NamedTuple):
    set_id: str
    labels: tuple[str, ...]

    def index(self, label: str) -> int:
        return self.labels.index(label)


STAGE1_CLASSES = ClassSet("background_cellular", ("background", "cellular"))
STAGE2_CLASSES = ClassSet("ce_laa", ("CE", "LAA"))

PROB_SUM_TOLERANCE = (0.99, 1.01)


def validate_probabilities(p: np.ndarray, atol: float = 1e-9) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if (p < 0).any() or not np.isfinite(p).all():
        raise ValueError("probabilities must be finite and nonnegative")
    if abs(p.sum() - 1.0) > atol:
        raise ValueError(f"probabilities sum to {p.sum()!r}, not 1")
    return p


@dataclass
class LinearModel:
    """Affine softmax head over the feature descriptor."""

    weights: np.ndarray  # (M, n_features)
    biases: np.ndarray   # (M,)
    class_set: ClassSet
    layout_version: int = LAYOUT_VERSION
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.biases = np.asarray(self.biases, dtype=np.float64)
        M = len(self.class_set.labels)
        if self.weights.shape != (M, N_FEATURES) or self.biases.shape != (M,):
            raise ValueError(
                f"model shape mismatch: weights {self.weights.shape}, "
                f"biases {self.biases.shape} for {M} classes"
            )
        if not (np.isfinite(self.weights).all() and np.isfinite(self.biases).all()):
            raise ValueError("model parameters must be finite")

    def save(self, path: str | Path) -> None:
        obj = {
            "class_set": self.class_set.set_id,
            "classes": list(self.class_set.labels),
            "layout_version": self.layout_version,
            "weights": self.weights.tolist(),
            "biases": self.biases.tolist(),
            "metadata": self.metadata,
        }
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        with open(tmp, "w") as fh:
            json.dump(obj, fh, indent=2)
            fh.write("\n")
        os.replace(tmp, path)

    @classmethod
    def load(cls, path: str | Path) -> "LinearModel":
        with open(path) as fh:
            obj = json.load(fh)
        return cls(
            weights=np.array(obj["weights"], dtype=np.float64),
            biases=np.array(obj["biases"], dtype=np.float64),
            class_set=ClassSet(obj["class_set"], tuple(obj["classes"])),
            layout_version=obj["layout_version"],
            metadata=obj.get("metadata", {}),
        )


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def predict_proba(model: LinearModel, features: np.ndarray,
                  layout_version: int = LAYOUT_VERSION) -> np.ndarray:
    """Class probabilities softmax(W f + b) for one feature vector."""
    if model.layout_version != layout_version:
        raise LayoutMismatchError(
            f"model layout v{model.layout_version} != features v{layout_version}"
        )
    features = np.asarray(features, dtype=np.float64)
    return softmax(model.weights @ features + model.biases)


def predict_proba_batch(model: LinearModel, features: np.ndarray,
                        layout_version: int = LAYOUT_VERSION) -> np.ndarray:
    if model.layout_version != layout_version:
        raise LayoutMismatchError(
            f"model layout v{model.layout_version} != features v{layout_version}"
        )
    logits = np.asarray(features, dtype=np.float64) @ model.weights.T + model.biases
    return softmax(logits)


def stage1_filter(records: Sequence, features_by_key: dict[tuple, np.ndarray],
                  model: LinearModel, threshold: float = 0.5) -> list:
    """Record the cellular probability on every tile with features and
    discard kept tiles that fall below the threshold.

    Tiles already discarded (content filter, edges) keep their original
    discard reason; only the probability is added.
    """
    if model.class_set.set_id != STAGE1_CLASSES.set_id:
        raise ValueError("stage-1 filtering requires a background/cellular model")
    cellular = model.class_set.index("cellular")
    for record in records:
        feats = features_by_key.get(record.spec.key)
        if feats is None:
            continue
        prob = float(predict_proba(model, feats)[cellular])
        record.stage1_prob_cellular = prob
        if record.kept and prob < threshold:
            record.discard("background")
    return list(records)


def aggregate_slide(tile_probs: Sequence[np.ndarray], method: str = "mean") -> np.ndarray:
    """Combine per-tile distributions into one slide-level distribution.

    mean: elementwise average, renormalized. majority: one-hot of the class
    winning the most tile argmaxes (ties fall back to mean). max_confidence:
    the single most confident tile's distribution (ties broken by the
    lexicographically largest distribution, so order never matters).
    """
    if len(tile_probs) == 0:
        raise ValueError("cannot aggregate a slide with no kept tiles")
    probs = np.asarray(tile_probs, dtype=np.float64)
    if method == "mean":
        avg = probs.mean(axis=0)
        return avg / avg.sum()
    if method == "majority":
        votes = np.bincount(probs.argmax(axis=1), minlength=probs.shape[1])
        winners = np.flatnonzero(votes == votes.max())
        if len(winners) > 1:
            return aggregate_slide(tile_probs, "mean")
        out = np.zeros(probs.shape[1])
        out[winners[0]] = 1.0
        return out
    if method == "max_confidence":
        best = max(range(len(probs)),
                   key=lambda i: (probs[i].max(), tuple(probs[i])))
        return probs[best].copy()
    raise ValueError(f"unknown aggregation method {method!r}")


# -- score CSV (external imports and our own predictions) ---------------------


def write_scores(path: str | Path, classes: Sequence[str],
                 rows: Sequence[tuple[str, int, int, np.ndarray]]) -> None:
    """CSV `slide_id,x,y,p_<class>...` sorted by key, written atomically."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["slide_id", "x", "y", *[f"p_{c}" for c in classes]])
        for slide_id, x, y, probs in sorted(rows, key=lambda r: (r[0], r[2], r[1])):
            writer.writerow([slide_id, x, y, *[repr(float(p)) for p in probs]])
    os.replace(tmp, path)


def load_external_scores(path: str | Path
                         ) -> tuple[dict[tuple[str, int, int], np.ndarray], tuple[str, ...]]:
    """Parse a score CSV into {(slide_id, x, y): probabilities}.

    Rows whose probabilities sum within [0.99, 1.01] are renormalized;
    anything else is rejected, as are duplicate tile keys.
    """
    path = Path(path)
    scores: dict[tuple[str, int, int], np.ndarray] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ScoreFormatError(f"{path.name}: empty score file") from None
        if header[:3] != ["slide_id", "x", "y"] or len(header) < 5:
            raise ScoreFormatError(f"{path.name}: bad header {header}")
        classes = []
        for col in header[3:]:
            if not col.startswith("p_"):
                raise ScoreFormatError(f"{path.name}: bad probability column {col!r}")
            classes.append(col[2:])
        n_cols = len(header)
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != n_cols:
                raise ScoreFormatError(
                    f"{path.name}:{line_no}: expected {n_cols} fields, got {len(row)}"
                )
            try:
                key = (row[0], int(row[1]), int(row[2]))
                p = np.array([float(v) for v in row[3:]], dtype=np.float64)
            except ValueError as exc:
                raise ScoreFormatError(f"{path.name}:{line_no}: {exc}") from exc
            if key in scores:
                raise ScoreFormatError(
                    f"{path.name}:{line_no}: duplicate tile key {key}"
                )
            if (p < 0).any() or not np.isfinite(p).all():
                raise ScoreFormatError(
                    f"{path.name}:{line_no}: probabilities must be finite and >= 0"
                )
            total = p.sum()
            if not PROB_SUM_TOLERANCE[0] <= total <= PROB_SUM_TOLERANCE[1]:
                raise ScoreFormatError(
                    f"{path.name}:{line_no}: probabilities sum to {total:.6f}, "
                    f"outside [{PROB_SUM_TOLERANCE[0]}, {PROB_SUM_TOLERANCE[1]}]"
                )
            scores[key] = p / total
    return scores, tuple(classes)
