"""Mini-batch training of the linear models with AdamW, early stopping,
stochastic weight averaging, and random learning-rate search.

Everything runs in float64 and is a pure function of (data, config, seed):
two runs with the same inputs produce bit-identical histories and models.
The training loss is the same weighted multi-class log loss used for
evaluation, with exact analytic gradients.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, asdict, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .classifier import ClassSet, LinearModel
from .errors import NonFiniteGradientError, TrainingDivergedError
from .features import LAYOUT_VERSION
from .metrics import EvalBatch, wmcll
from .seeding import derived_rng

Params = dict[str, np.ndarray]

DEFAULT_LR = 3e-4
DEFAULT_WEIGHT_DECAY = 0.01


@dataclass
class OptimizerState:
    """AdamW moments and hyperparameters; step t counts completed updates."""

    t: int
    m: Params
    v: Params
    lr: float = DEFAULT_LR
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = DEFAULT_WEIGHT_DECAY


def init_optimizer(params: Params, lr: float = DEFAULT_LR,
                   weight_decay: float = DEFAULT_WEIGHT_DECAY) -> OptimizerState:
    return OptimizerState(t=0,
                          m={k: np.zeros_like(p) for k, p in params.items()},
                          v={k: np.zeros_like(p) for k, p in params.items()},
                          lr=lr, weight_decay=weight_decay)


def adamw_step(state: OptimizerState, params: Params, grads: Params
               ) -> tuple[OptimizerState, Params]:
    """One decoupled-weight-decay Adam update; returns new state and params.

    m' = b1 m + (1-b1) g ; v' = b2 v + (1-b2) g^2, bias-corrected, then
    p' = p - lr * (m_hat/(sqrt(v_hat)+eps) + weight_decay * p).
    """
    for key, g in grads.items():
        if not np.isfinite(g).all():
            bad = np.argwhere(~np.isfinite(np.atleast_1d(g)))[0]
            raise NonFiniteGradientError(
                f"non-finite gradient in {key!r} at index {tuple(bad)}"
            )
    t = state.t + 1
    new_m, new_v, new_params = {}, {}, {}
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for key, p in params.items():
        g = grads[key]
        m = state.beta1 * state.m[key] + (1.0 - state.beta1) * g
        v = state.beta2 * state.v[key] + (1.0 - state.beta2) * g * g
        m_hat = m / bc1
        v_hat = v / bc2
        new_params[key] = p - state.lr * (
            m_hat / (np.sqrt(v_hat) + state.eps) + state.weight_decay * p
        )
        new_m[key] = m
        new_v[key] = v
    next_state = OptimizerState(t=t, m=new_m, v=new_v, lr=state.lr,
                                beta1=state.beta1, beta2=state.beta2,
                                eps=state.eps, weight_decay=state.weight_decay)
    return next_state, new_params


def compute_loss_and_grads(params: Params, features: np.ndarray,
                           labels: np.ndarray, class_weights: np.ndarray
                           ) -> tuple[float, Params]:
    """Batch WMCLL of softmax(W x + b) and its exact analytic gradients."""
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.intp)
    if X.shape[0] == 0:
        raise ValueError("batch must be nonempty")
    W, b = params["weights"], params["biases"]
    logits = X @ W.T + b
    logits -= logits.max(axis=1, keepdims=True)
    log_probs = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
    n = X.shape[0]
    sample_w = class_weights[y]
    loss = float(-(sample_w * log_probs[np.arange(n), y]).sum() / n)

    probs = np.exp(log_probs)
    delta = probs.copy()
    delta[np.arange(n), y] -= 1.0
    delta *= sample_w[:, None] / n
    return loss, {"weights": delta.T @ X, "biases": delta.sum(axis=0)}


def swa_update(running_avg: Params | None, new_params: Params, n_models: int
               ) -> Params:
    """Running equal-weight average: avg' = (n*avg + new)/(n+1)."""
    if n_models == 0 or running_avg is None:
        return {k: v.copy() for k, v in new_params.items()}
    out = {}
    for key, avg in running_avg.items():
        if avg.shape != new_params[key].shape:
            raise ValueError(f"shape mismatch for {key!r} in SWA update")
        out[key] = (n_models * avg + new_params[key]) / (n_models + 1)
    return out


@dataclass(frozen=True)
class EarlyStopConfig:
    patience: int = 10
    min_delta: float = 1e-4


@dataclass(frozen=True)
class SwaConfig:
    enabled: bool = False
    start_epoch: int = 10


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 500
    batch_size: int = 32
    seed: int = 0
    lr: float = DEFAULT_LR
    weight_decay: float = DEFAULT_WEIGHT_DECAY
    early_stop: EarlyStopConfig = EarlyStopConfig()
    swa: SwaConfig = SwaConfig()
    class_weights: tuple[float, ...] | None = None  # None = all ones

    def validate(self, n_classes: int) -> None:
        if self.max_epochs < 1 or self.batch_size < 1:
            raise ValueError("max_epochs and batch_size must be >= 1")
        if self.early_stop.patience < 1:
            raise ValueError("early-stop patience must be >= 1")
        if self.swa.enabled and not self.swa.start_epoch < self.max_epochs:
            raise ValueError("swa.start_epoch must be < max_epochs")
        if self.class_weights is not None and len(self.class_weights) != n_classes:
            raise ValueError("class_weights length must match the class count")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    val_wmcll: float
    lr: float
    stopped_early: bool


def _weights_array(config: TrainConfig, n_classes: int) -> np.ndarray:
    if config.class_weights is None:
        return np.ones(n_classes, dtype=np.float64)
    return np.asarray(config.class_weights, dtype=np.float64)


def _val_wmcll(params: Params, X: np.ndarray, y: np.ndarray,
               class_weights: np.ndarray) -> float:
    logits = X @ params["weights"].T + params["biases"]
    shifted = logits - logits.max(axis=1, keepdims=True)
    probs = np.exp(shifted)
    probs /= probs.sum(axis=1, keepdims=True)
    return wmcll(EvalBatch.from_labels(y, probs, class_weights))


def train(train_features: np.ndarray, train_labels: Sequence[int],
          val_features: np.ndarray, val_labels: Sequence[int],
          config: TrainConfig, class_set: ClassSet
          ) -> tuple[LinearModel, list[EpochStats]]:
    """Train a linear model; returns it and the per-epoch history.

    Validation WMCLL is monitored after each epoch. Training stops at
    max_epochs or once the metric has failed to improve by min_delta for
    `patience` consecutive epochs. The returned weights are the SWA average
    when enabled, otherwise the best-validation checkpoint.

    Features are standardized internally (train-set mean/std) so the 3e-4
    learning rate behaves the same at any feature scale; the inverse
    transform is folded into the returned weights, so the model still maps
    raw feature vectors.
    """
    X = np.asarray(train_features, dtype=np.float64)
    Xv = np.asarray(val_features, dtype=np.float64)
    y = np.asarray(train_labels, dtype=np.intp)
    yv = np.asarray(val_labels, dtype=np.intp)
    if len(X) == 0 or len(Xv) == 0:
        raise ValueError("train and validation sets must be nonempty")
    n_classes = len(class_set.labels)
    config.validate(n_classes)
    class_weights = _weights_array(config, n_classes)

    mu = X.mean(axis=0)
    sigma = X.std(axis=0)
    sigma[sigma < 1e-12] = 1.0
    X = (X - mu) / sigma
    Xv = (Xv - mu) / sigma

    params: Params = {
        "weights": np.zeros((n_classes, X.shape[1]), dtype=np.float64),
        "biases": np.zeros(n_classes, dtype=np.float64),
    }
    state = init_optimizer(params, lr=config.lr, weight_decay=config.weight_decay)

    best_val = math.inf
    best_params = {k: v.copy() for k, v in params.items()}
    bad_epochs = 0
    swa_avg: Params | None = None
    swa_count = 0
    history: list[EpochStats] = []
    stopped_early = False

    for epoch in range(1, config.max_epochs + 1):
        order = derived_rng(config.seed, "epoch", epoch).permutation(len(X))
        losses = []
        for start in range(0, len(X), config.batch_size):
            idx = order[start : start + config.batch_size]
            loss, grads = compute_loss_and_grads(params, X[idx], y[idx],
                                                 class_weights)
            if not math.isfinite(loss):
                raise TrainingDivergedError(epoch, loss)
            state, params = adamw_step(state, params, grads)
            losses.append(loss)
        train_loss = float(np.mean(losses))
        val_loss = _val_wmcll(params, Xv, yv, class_weights)
        if not math.isfinite(val_loss):
            raise TrainingDivergedError(epoch, val_loss)

        if config.swa.enabled and epoch >= config.swa.start_epoch:
            swa_avg = swa_update(swa_avg, params, swa_count)
            swa_count += 1

        if val_loss < best_val - config.early_stop.min_delta:
            best_val = val_loss
            best_params = {k: v.copy() for k, v in params.items()}
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= config.early_stop.patience:
                stopped_early = True

        history.append(EpochStats(epoch, train_loss, val_loss, config.lr,
                                  stopped_early))
        if stopped_early:
            break

    final = swa_avg if (config.swa.enabled and swa_avg is not None) else best_params
    final_val = _val_wmcll(final, Xv, yv, class_weights)
    # Fold the standardization into the affine map: the saved model applies
    # to raw feature vectors.
    raw_weights = final["weights"] / sigma
    raw_biases = final["biases"] - raw_weights @ mu
    model = LinearModel(
        weights=raw_weights,
        biases=raw_biases,
        class_set=class_set,
        layout_version=LAYOUT_VERSION,
        metadata={
            "seed": config.seed,
            "lr": config.lr,
            "epochs_run": history[-1].epoch,
            "stopped_early": stopped_early,
            "swa": config.swa.enabled,
            "final_val_wmcll": final_val,
        },
    )
    return model, history


def write_history_csv(path: str | Path, history: Sequence[EpochStats]) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_wmcll", "lr", "stopped_early"])
        for row in history:
            writer.writerow([row.epoch, repr(row.train_loss), repr(row.val_wmcll),
                             repr(row.lr), str(row.stopped_early).lower()])
    os.replace(tmp, path)


# -- random hyperparameter search ---------------------------------------------


@dataclass(frozen=True)
class TrialResult:
    trial: int
    lr: float
    final_val_wmcll: float
    epochs_run: int


def _run_trial(args) -> TrialResult:
    (trial, lr, train_X, train_y, val_X, val_y, config, class_set) = args
    model, history = train(train_X, train_y, val_X, val_y,
                           replace(config, lr=lr), class_set)
    return TrialResult(trial, lr, model.metadata["final_val_wmcll"],
                       history[-1].epoch)


def random_search(train_features: np.ndarray, train_labels: Sequence[int],
                  val_features: np.ndarray, val_labels: Sequence[int],
                  base_config: TrainConfig, class_set: ClassSet,
                  trials: int = 50,
                  lr_range: tuple[float, float] = (1e-6, 1e-3),
                  seed: int = 0, workers: int = 1
                  ) -> tuple[TrialResult, list[TrialResult]]:
    """Log-uniform learning-rate search; best = lowest validation WMCLL.

    Learning rates are all sampled up front from the search seed, so trials
    may run in parallel and still reduce deterministically in trial order.
    Ties go to the earlier trial.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    lo, hi = lr_range
    if not 0 < lo <= hi:
        raise ValueError("lr_range must satisfy 0 < low <= high")
    rng = derived_rng(seed, "lr-search")
    lrs = [float(10.0 ** rng.uniform(math.log10(lo), math.log10(hi)))
           for _ in range(trials)]
    jobs = [(i, lr, train_features, train_labels, val_features, val_labels,
             base_config, class_set) for i, lr in enumerate(lrs)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_trial, jobs))
    else:
        results = [_run_trial(job) for job in jobs]
    best = min(results, key=lambda r: (r.final_val_wmcll, r.trial))
    return best, results


def write_trials_csv(path: str | Path, results: Sequence[TrialResult]) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["trial", "lr", "final_val_wmcll", "epochs_run"])
        for r in results:
            writer.writerow([r.trial, repr(r.lr), repr(r.final_val_wmcll),
                             r.epochs_run])
    os.replace(tmp, path)
