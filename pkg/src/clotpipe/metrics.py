"""Weighted multi-class log loss, classification metrics, and dataset splits.

The loss is WMCLL = -(1/N) sum_i sum_j w_j * y_ij * log(p_ij) with natural
log and probabilities clipped to [clip_eps, 1]. Precision/recall/F1 come
from one-vs-rest confusion counts; division-by-zero cases report 0 with a
degenerate flag instead of aborting batch evaluation.

Splitting is stratified by class at slide granularity so no slide's tiles
leak across train/validation/test.
"""

from __future__ import annotations

import json
import os
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .seeding import derived_rng

SPLIT_NAMES = ("train", "validation", "test")
DEFAULT_SPLIT_RATIOS = (0.70, 0.15, 0.15)


@dataclass(frozen=True)
class EvalBatch:
    """Paired one-hot truths, predicted distributions, and class weights."""

    y: np.ndarray  # (N, M) one-hot
    p: np.ndarray  # (N, M) probabilities
    w: np.ndarray  # (M,) class weights

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.float64)
        p = np.asarray(self.p, dtype=np.float64)
        w = np.asarray(self.w, dtype=np.float64)
        if y.ndim != 2 or y.shape != p.shape or w.shape != (y.shape[1],):
            raise ValueError("shape mismatch between y, p, and w")
        if not ((y == 0) | (y == 1)).all() or not (y.sum(axis=1) == 1).all():
            raise ValueError("y rows must be one-hot")
        if (p < 0).any() or (np.abs(p.sum(axis=1) - 1.0) > 1e-9).any():
            raise ValueError("p rows must be probability distributions")
        if (w <= 0).any():
            raise ValueError("class weights must be > 0")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "w", w)

    @classmethod
    def from_labels(cls, y_true: Sequence[int], p: np.ndarray,
                    w: np.ndarray | None = None) -> "EvalBatch":
        p = np.asarray(p, dtype=np.float64)
        y = np.zeros_like(p)
        y[np.arange(len(y_true)), np.asarray(y_true, dtype=np.intp)] = 1.0
        if w is None:
            w = np.ones(p.shape[1])
        return cls(y, p, w)

    @property
    def n_samples(self) -> int:
        return self.y.shape[0]

    @property
    def n_classes(self) -> int:
        return self.y.shape[1]


def wmcll(batch: EvalBatch, clip_eps: float = 1e-15) -> float:
    """Weighted multi-class logarithmic loss of one evaluation batch."""
    if batch.n_samples == 0:
        raise ValueError("cannot evaluate an empty batch")
    p = np.clip(batch.p, clip_eps, 1.0)
    return float(-(batch.w * batch.y * np.log(p)).sum() / batch.n_samples)


def inverse_frequency_weights(y_true: Sequence[int], n_classes: int) -> np.ndarray:
    """w_j proportional to N/(M*count_j); unseen classes get weight 1."""
    counts = np.bincount(np.asarray(y_true, dtype=np.intp), minlength=n_classes)
    n = len(y_true)
    weights = np.ones(n_classes, dtype=np.float64)
    seen = counts > 0
    weights[seen] = n / (n_classes * counts[seen])
    return weights


# -- confusion counts and derived metrics -------------------------------------


@dataclass(frozen=True)
class ConfusionCounts:
    """M x M matrix of (true, predicted) counts plus one-vs-rest views."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.int64)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or (m < 0).any():
            raise ValueError("confusion matrix must be square and nonnegative")
        object.__setattr__(self, "matrix", m)

    @property
    def n_classes(self) -> int:
        return self.matrix.shape[0]

    @property
    def total(self) -> int:
        return int(self.matrix.sum())

    def tp(self, j: int) -> int:
        return int(self.matrix[j, j])

    def fp(self, j: int) -> int:
        return int(self.matrix[:, j].sum() - self.matrix[j, j])

    def fn(self, j: int) -> int:
        return int(self.matrix[j, :].sum() - self.matrix[j, j])

    def tn(self, j: int) -> int:
        return self.total - self.tp(j) - self.fp(j) - self.fn(j)


def confusion(y_true: Sequence[int], y_pred: Sequence[int], n_classes: int
              ) -> ConfusionCounts:
    y_true = np.asarray(y_true, dtype=np.intp)
    y_pred = np.asarray(y_pred, dtype=np.intp)
    if y_true.shape != y_pred.shape:
        raise ValueError("y_true and y_pred must have the same length")
    if len(y_true) and (
        y_true.min() < 0 or y_true.max() >= n_classes
        or y_pred.min() < 0 or y_pred.max() >= n_classes
    ):
        raise ValueError(f"labels must lie in [0, {n_classes})")
    matrix = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(matrix, (y_true, y_pred), 1)
    return ConfusionCounts(matrix)


class MetricValue(NamedTuple):
    value: float
    degenerate: bool  # True when the defining ratio was 0/0

    def __float__(self) -> float:
        return self.value


def _ratio(num: int, den: int) -> MetricValue:
    if den == 0:
        return MetricValue(0.0, True)
    return MetricValue(num / den, False)


def accuracy(c: ConfusionCounts) -> MetricValue:
    """Correct fraction over all samples (equals (TP+TN)/total one-vs-rest
    for the binary case)."""
    return _ratio(int(np.trace(c.matrix)), c.total)


def precision(c: ConfusionCounts, j: int) -> MetricValue:
    return _ratio(c.tp(j), c.tp(j) + c.fp(j))


def recall(c: ConfusionCounts, j: int) -> MetricValue:
    return _ratio(c.tp(j), c.tp(j) + c.fn(j))


def f1(c: ConfusionCounts, j: int) -> MetricValue:
    """Harmonic mean of precision and recall, computed from counts as
    2TP/(2TP+FP+FN) so equal precision/recall reproduce exactly."""
    p = precision(c, j)
    r = recall(c, j)
    if p.value + r.value == 0.0:
        return MetricValue(0.0, True)
    return MetricValue(2 * c.tp(j) / (2 * c.tp(j) + c.fp(j) + c.fn(j)), False)


def micro_precision(c: ConfusionCounts) -> MetricValue:
    tp = sum(c.tp(j) for j in range(c.n_classes))
    fp = sum(c.fp(j) for j in range(c.n_classes))
    return _ratio(tp, tp + fp)


def micro_recall(c: ConfusionCounts) -> MetricValue:
    tp = sum(c.tp(j) for j in range(c.n_classes))
    fn = sum(c.fn(j) for j in range(c.n_classes))
    return _ratio(tp, tp + fn)


def _macro(values: list[MetricValue]) -> float:
    return float(np.mean([v.value for v in values])) if values else 0.0


# -- evaluation reports --------------------------------------------------------


@dataclass
class EvalReport:
    """One model's metrics at one evaluation level (tile or slide)."""

    model_name: str
    level: str
    classes: tuple[str, ...]
    n_samples: int
    wmcll: float
    accuracy: float
    per_class: dict[str, dict] = field(default_factory=dict)
    macro: dict[str, float] = field(default_factory=dict)
    micro: dict[str, float] = field(default_factory=dict)
    confusion_matrix: list[list[int]] = field(default_factory=list)
    class_weights: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "model": self.model_name,
            "level": self.level,
            "classes": list(self.classes),
            "n_samples": self.n_samples,
            "n_classes": len(self.classes),
            "wmcll": self.wmcll,
            "accuracy": self.accuracy,
            "per_class": self.per_class,
            "macro": self.macro,
            "micro": self.micro,
            "confusion_matrix": self.confusion_matrix,
            "class_weights": self.class_weights,
        }


def evaluate(y_true: Sequence[int], probs: np.ndarray, classes: Sequence[str],
             weights: np.ndarray | None = None, level: str = "tile",
             model_name: str = "builtin") -> EvalReport:
    """Metrics for one prediction set: WMCLL, accuracy, per-class and
    averaged precision/recall/F1, and the confusion matrix."""
    probs = np.asarray(probs, dtype=np.float64)
    n_classes = len(classes)
    if weights is None:
        weights = np.ones(n_classes)
    batch = EvalBatch.from_labels(y_true, probs, weights)
    y_pred = probs.argmax(axis=1)
    c = confusion(y_true, y_pred, n_classes)
    per_class = {}
    pvals, rvals, fvals = [], [], []
    for j, name in enumerate(classes):
        p, r, f = precision(c, j), recall(c, j), f1(c, j)
        pvals.append(p)
        rvals.append(r)
        fvals.append(f)
        per_class[name] = {
            "precision": p.value, "precision_degenerate": p.degenerate,
            "recall": r.value, "recall_degenerate": r.degenerate,
            "f1": f.value, "f1_degenerate": f.degenerate,
            "support": c.tp(j) + c.fn(j),
        }
    acc = accuracy(c)
    return EvalReport(
        model_name=model_name,
        level=level,
        classes=tuple(classes),
        n_samples=batch.n_samples,
        wmcll=wmcll(batch),
        accuracy=acc.value,
        per_class=per_class,
        macro={
            "precision": _macro(pvals),
            "recall": _macro(rvals),
            "f1": _macro(fvals),
        },
        micro={
            "precision": micro_precision(c).value,
            "recall": micro_recall(c).value,
            "f1": micro_precision(c).value,
        },
        confusion_matrix=c.matrix.tolist(),
        class_weights=[float(w) for w in weights],
    )


def render_report_table(reports: Sequence[EvalReport]) -> str:
    """Aligned comparison table, one row per model/level."""
    headers = ["Model", "Level", "WMCLL", "Accuracy", "Precision", "Recall",
               "F1-Score", "N"]
    rows = []
    for rep in reports:
        rows.append([
            rep.model_name,
            rep.level,
            f"{rep.wmcll:.4f}",
            f"{rep.accuracy:.4f}",
            f"{rep.macro['precision']:.4f}",
            f"{rep.macro['recall']:.4f}",
            f"{rep.macro['f1']:.4f}",
            str(rep.n_samples),
        ])
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h)
              for i, h in enumerate(headers)]
    sep = "+".join("-" * (w + 2) for w in widths)
    lines = [
        " | ".join(h.ljust(w) for h, w in zip(headers, widths)),
        sep,
    ]
    for r in rows:
        lines.append(" | ".join(v.ljust(w) for v, w in zip(r, widths)))
    return "\n".join(lines)


# -- dataset splitting ---------------------------------------------------------


@dataclass(frozen=True)
class SplitAssignment:
    """slide_id -> split name, with the seed and ratios that produced it."""

    assignment: dict[str, str]
    seed: int
    ratios: tuple[float, float, float]

    def slides(self, split: str) -> list[str]:
        return sorted(s for s, name in self.assignment.items() if name == split)

    def save(self, path: str | Path) -> None:
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        with open(tmp, "w") as fh:
            json.dump({
                "seed": self.seed,
                "ratios": list(self.ratios),
                "assignment": dict(sorted(self.assignment.items())),
            }, fh, indent=2)
            fh.write("\n")
        os.replace(tmp, path)

    @classmethod
    def load(cls, path: str | Path) -> "SplitAssignment":
        with open(path) as fh:
            obj = json.load(fh)
        return cls(obj["assignment"], obj["seed"], tuple(obj["ratios"]))


def _apportion(n: int, ratios: Sequence[float]) -> list[int]:
    """Largest-remainder split of n items; each count within 1 of its target."""
    targets = [n * r for r in ratios]
    counts = [int(t) for t in targets]
    leftover = n - sum(counts)
    by_frac = sorted(range(len(ratios)), key=lambda i: targets[i] - counts[i],
                     reverse=True)
    for i in range(leftover):
        counts[by_frac[i]] += 1
    return counts


def split_dataset(slides: Sequence[tuple[str, str]],
                  ratios: tuple[float, float, float] = DEFAULT_SPLIT_RATIOS,
                  seed: int = 0) -> SplitAssignment:
    """Stratified train/validation/test assignment at slide granularity.

    Within each class stratum the slides are shuffled (seeded) and cut
    contiguously, so realized counts land within one slide of the targets.
    Strata smaller than the number of splits go entirely to train, with a
    warning.
    """
    if any(r <= 0 for r in ratios):
        raise ValueError("split ratios must be positive")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must sum to 1, got {sum(ratios)}")
    ids = [s for s, _ in slides]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate slide_id in split input")

    strata: dict[str, list[str]] = {}
    for slide_id, label in slides:
        strata.setdefault(label, []).append(slide_id)

    assignment: dict[str, str] = {}
    for label in sorted(strata):
        members = sorted(strata[label])
        if len(members) < len(SPLIT_NAMES):
            warnings.warn(
                f"stratum {label!r} has {len(members)} slide(s), fewer than "
                f"{len(SPLIT_NAMES)} splits; assigning all to train",
                stacklevel=2,
            )
            for slide_id in members:
                assignment[slide_id] = "train"
            continue
        rng = derived_rng(seed, "split", label)
        order = rng.permutation(len(members))
        shuffled = [members[i] for i in order]
        counts = _apportion(len(members), ratios)
        start = 0
        for split_name, count in zip(SPLIT_NAMES, counts):
            for slide_id in shuffled[start : start + count]:
                assignment[slide_id] = split_name
            start += count

    # Leakage guard: every slide in exactly one split.
    assert len(assignment) == len(ids) and set(assignment) == set(ids)
    return SplitAssignment(assignment, seed, tuple(ratios))
