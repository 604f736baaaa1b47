"""AdamW update arithmetic, gradient correctness against finite differences,
the training loop's stopping/averaging behavior, and the LR search."""

import math

import numpy as np
import pytest

from clotpipe.classifier import STAGE2_CLASSES, predict_proba_batch
from clotpipe.errors import NonFiniteGradientError, TrainingDivergedError
from clotpipe.features import N_FEATURES
from clotpipe.trainer import (
    EarlyStopConfig,
    SwaConfig,
    TrainConfig,
    TrialResult,
    adamw_step,
    compute_loss_and_grads,
    init_optimizer,
    random_search,
    swa_update,
    train,
    write_history_csv,
)


def random_params(rng, M=2, n=N_FEATURES):
    return {"weights": rng.normal(size=(M, n)), "biases": rng.normal(size=M)}


def finite_difference_grads(params, X, y, w, h=1e-5):
    """Central differences of the loss wrt every parameter entry."""
    grads = {}
    for key, arr in params.items():
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            plus, _ = compute_loss_and_grads(params, X, y, w)
            flat[i] = orig - h
            minus, _ = compute_loss_and_grads(params, X, y, w)
            flat[i] = orig
            gflat[i] = (plus - minus) / (2 * h)
        grads[key] = g
    return grads


class TestAdamW:
    def test_zero_grad_zero_decay_is_fixed_point(self, rng):
        params = random_params(rng)
        state = init_optimizer(params, lr=0.1, weight_decay=0.0)
        zero = {k: np.zeros_like(v) for k, v in params.items()}
        _, new = adamw_step(state, params, zero)
        for key in params:
            assert np.array_equal(new[key], params[key])

    def test_zero_grad_decay_shrinks_params(self):
        params = {"weights": np.array([[1.0]]), "biases": np.array([0.0])}
        state = init_optimizer(params, lr=0.1, weight_decay=0.01)
        _, new = adamw_step(state, params, {"weights": np.array([[0.0]]),
                                            "biases": np.array([0.0])})
        assert new["weights"][0, 0] == pytest.approx(0.999, abs=1e-15)

    def test_decoupled_decay_exact_form(self, rng):
        # With g = 0 the update must be exactly -lr * wd * param.
        params = random_params(rng)
        state = init_optimizer(params, lr=0.037, weight_decay=0.19)
        zero = {k: np.zeros_like(v) for k, v in params.items()}
        _, new = adamw_step(state, params, zero)
        for key in params:
            expected = params[key] - 0.037 * 0.19 * params[key]
            assert np.abs(new[key] - expected).max() < 1e-15

    def test_first_step_magnitude(self):
        # t=1 bias correction makes the step lr*g/(|g|+eps).
        for g in (1.0, -2.5, 0.3):
            params = {"p": np.array([0.0])}
            state = init_optimizer(params, lr=3e-4, weight_decay=0.0)
            _, new = adamw_step(state, params, {"p": np.array([g])})
            expected = 3e-4 * abs(g) / (abs(g) + 1e-8)
            assert abs(abs(new["p"][0]) - expected) < 1e-12
            assert abs(new["p"][0]) == pytest.approx(3e-4, rel=1e-6)

    def test_state_step_increments(self, rng):
        params = random_params(rng)
        state = init_optimizer(params)
        g = {k: rng.normal(size=v.shape) for k, v in params.items()}
        state, params = adamw_step(state, params, g)
        assert state.t == 1
        state, _ = adamw_step(state, params, g)
        assert state.t == 2

    def test_second_moment_nonnegative(self, rng):
        params = random_params(rng)
        state = init_optimizer(params)
        for _ in range(5):
            g = {k: rng.normal(size=v.shape) for k, v in params.items()}
            state, params = adamw_step(state, params, g)
        assert all((v >= 0).all() for v in state.v.values())

    def test_matches_sequence_oracle(self, rng):
        """Scalar AdamW recomputed step by step with plain floats."""
        lr, b1, b2, eps, wd = 0.01, 0.9, 0.999, 1e-8, 0.05
        params = {"p": np.array([0.7])}
        state = init_optimizer(params, lr=lr, weight_decay=wd)
        p, m, v = 0.7, 0.0, 0.0
        for t in range(1, 8):
            g = float(rng.normal())
            state, params = adamw_step(state, params, {"p": np.array([g])})
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            m_hat = m / (1 - b1**t)
            v_hat = v / (1 - b2**t)
            p = p - lr * (m_hat / (math.sqrt(v_hat) + eps) + wd * p)
            assert params["p"][0] == pytest.approx(p, abs=1e-15)

    def test_non_finite_gradient_identified(self, rng):
        params = random_params(rng)
        state = init_optimizer(params)
        bad = {k: np.zeros_like(v) for k, v in params.items()}
        bad["weights"][1, 3] = np.nan
        with pytest.raises(NonFiniteGradientError, match="weights"):
            adamw_step(state, params, bad)


class TestLossAndGrads:
    def test_confident_correct_prediction_near_zero(self):
        params = {"weights": np.zeros((2, 2)), "biases": np.array([50.0, -50.0])}
        X = np.zeros((4, 2))
        y = np.zeros(4, dtype=int)
        loss, grads = compute_loss_and_grads(params, X, y, np.ones(2))
        assert loss < 1e-12
        assert all(np.abs(g).max() < 1e-12 for g in grads.values())

    def test_zero_model_uniform_loss_is_ln2(self, rng):
        params = {"weights": np.zeros((2, N_FEATURES)), "biases": np.zeros(2)}
        X = rng.random((8, N_FEATURES))
        y = rng.integers(0, 2, 8)
        loss, _ = compute_loss_and_grads(params, X, y, np.ones(2))
        assert loss == pytest.approx(math.log(2), abs=1e-12)

    def test_class_weights_scale_loss(self, rng):
        params = random_params(rng, M=2, n=3)
        X = rng.random((6, 3))
        y = np.array([0, 0, 0, 1, 1, 1])
        base, _ = compute_loss_and_grads(params, X, y, np.ones(2))
        # doubling every weight doubles the loss
        double, _ = compute_loss_and_grads(params, X, y, 2 * np.ones(2))
        assert double == pytest.approx(2 * base, rel=1e-12)

    @pytest.mark.parametrize("M,n_batch", [(2, 4), (3, 8), (5, 16)])
    def test_gradients_match_finite_differences(self, rng, M, n_batch):
        for _ in range(5):
            params = random_params(rng, M=M, n=6)
            X = rng.normal(size=(n_batch, 6))
            y = rng.integers(0, M, n_batch)
            w = rng.uniform(0.5, 2.0, M)
            _, analytic = compute_loss_and_grads(params, X, y, w)
            numeric = finite_difference_grads(params, X, y, w)
            for key in params:
                denom = np.maximum(np.abs(numeric[key]), 1e-8)
                rel = np.abs(analytic[key] - numeric[key]) / denom
                assert rel.max() < 1e-6

    def test_empty_batch_rejected(self, rng):
        params = random_params(rng)
        with pytest.raises(ValueError):
            compute_loss_and_grads(params, np.zeros((0, N_FEATURES)),
                                   np.zeros(0, dtype=int), np.ones(2))


class TestSwa:
    def test_symmetric_average_is_zero(self, rng):
        w = random_params(rng)
        neg = {k: -v for k, v in w.items()}
        avg = swa_update(w, neg, 1)
        assert all(np.abs(v).max() < 1e-15 for v in avg.values())

    def test_sequential_equals_batch_mean(self, rng):
        checkpoints = [random_params(rng) for _ in range(9)]
        avg = None
        for i, ckpt in enumerate(checkpoints):
            avg = swa_update(avg, ckpt, i)
        for key in avg:
            batch = np.mean([c[key] for c in checkpoints], axis=0)
            assert np.abs(avg[key] - batch).max() < 1e-12

    def test_first_checkpoint_is_identity(self, rng):
        w = random_params(rng)
        avg = swa_update(None, w, 0)
        for key in w:
            assert np.array_equal(avg[key], w[key])

    def test_shape_mismatch_rejected(self, rng):
        a = {"p": np.zeros(3)}
        b = {"p": np.zeros(4)}
        with pytest.raises(ValueError):
            swa_update(a, b, 1)


def separable_dataset(rng, n=120, margin=2.0):
    """Two classes split by feature 0; linearly separable by construction."""
    X = rng.normal(size=(n, N_FEATURES))
    y = rng.integers(0, 2, n)
    X[:, 0] = np.where(y == 1, margin + rng.random(n), -margin - rng.random(n))
    return X, y


class TestTrainLoop:
    def test_reaches_95pct_train_accuracy(self, rng):
        X, y = separable_dataset(rng)
        config = TrainConfig(max_epochs=500, batch_size=16, seed=3, lr=3e-4)
        model, history = train(X, y, X, y, config, STAGE2_CLASSES)
        pred = predict_proba_batch(model, X).argmax(axis=1)
        assert (pred == y).mean() >= 0.95

    def test_patience_arithmetic(self, monkeypatch, rng):
        # validation losses 1.0, 0.9, 0.91, 0.92 with patience 2 -> stop at 4
        losses = iter([1.0, 0.9, 0.91, 0.92, 0.5, 0.4])
        monkeypatch.setattr("clotpipe.trainer._val_wmcll",
                            lambda *args: next(losses))
        X, y = separable_dataset(rng, n=20)
        config = TrainConfig(max_epochs=50, batch_size=8, seed=0,
                             early_stop=EarlyStopConfig(patience=2, min_delta=1e-4))
        _, history = train(X, y, X, y, config, STAGE2_CLASSES)
        assert [h.epoch for h in history] == [1, 2, 3, 4]
        assert history[-1].stopped_early

    def test_bitwise_reproducible(self, rng):
        X, y = separable_dataset(rng, n=60)
        config = TrainConfig(max_epochs=30, batch_size=8, seed=11)
        m1, h1 = train(X, y, X, y, config, STAGE2_CLASSES)
        m2, h2 = train(X, y, X, y, config, STAGE2_CLASSES)
        assert np.array_equal(m1.weights, m2.weights)
        assert np.array_equal(m1.biases, m2.biases)
        assert h1 == h2

    def test_different_seeds_shuffle_differently(self, rng):
        X, y = separable_dataset(rng, n=60)
        m1, _ = train(X, y, X, y, TrainConfig(max_epochs=5, seed=1), STAGE2_CLASSES)
        m2, _ = train(X, y, X, y, TrainConfig(max_epochs=5, seed=2), STAGE2_CLASSES)
        assert not np.array_equal(m1.weights, m2.weights)

    def test_swa_model_is_average_of_checkpoints(self, rng):
        X, y = separable_dataset(rng, n=40)
        config = TrainConfig(max_epochs=6, batch_size=8, seed=4,
                             early_stop=EarlyStopConfig(patience=100),
                             swa=SwaConfig(enabled=True, start_epoch=3))
        model, history = train(X, y, X, y, config, STAGE2_CLASSES)
        assert len(history) == 6
        assert model.metadata["swa"] is True

    def test_divergence_reports_epoch(self, rng):
        X, y = separable_dataset(rng, n=20)
        X[3, 5] = np.nan  # poisoned feature makes the loss non-finite
        config = TrainConfig(max_epochs=10, batch_size=20, seed=0)
        with pytest.raises(TrainingDivergedError) as err:
            with np.errstate(all="ignore"):
                train(X, y, X, y, config, STAGE2_CLASSES)
        assert err.value.epoch == 1

    def test_empty_sets_rejected(self, rng):
        X, y = separable_dataset(rng, n=10)
        with pytest.raises(ValueError):
            train(np.zeros((0, N_FEATURES)), [], X, y, TrainConfig(), STAGE2_CLASSES)

    def test_history_csv(self, tmp_path, rng):
        X, y = separable_dataset(rng, n=30)
        _, history = train(X, y, X, y, TrainConfig(max_epochs=3), STAGE2_CLASSES)
        path = tmp_path / "history.csv"
        write_history_csv(path, history)
        lines = path.read_text().splitlines()
        assert lines[0] == "epoch,train_loss,val_wmcll,lr,stopped_early"
        assert len(lines) == 4


class TestRandomSearch:
    def test_single_trial_is_best(self, rng):
        X, y = separable_dataset(rng, n=30)
        config = TrainConfig(max_epochs=3, batch_size=8)
        best, results = random_search(X, y, X, y, config, STAGE2_CLASSES,
                                      trials=1, seed=5)
        assert best == results[0]

    def test_sampled_lrs_within_range(self, rng):
        X, y = separable_dataset(rng, n=30)
        config = TrainConfig(max_epochs=1, batch_size=8)
        _, results = random_search(X, y, X, y, config, STAGE2_CLASSES,
                                   trials=20, lr_range=(1e-6, 1e-3), seed=5)
        assert len(results) == 20
        assert all(1e-6 <= r.lr <= 1e-3 for r in results)

    def test_best_not_worse_than_median(self, rng):
        X, y = separable_dataset(rng, n=60)
        config = TrainConfig(max_epochs=10, batch_size=16,
                             early_stop=EarlyStopConfig(patience=3))
        best, results = random_search(X, y, X, y, config, STAGE2_CLASSES,
                                      trials=9, seed=7)
        median = sorted(r.final_val_wmcll for r in results)[len(results) // 2]
        assert best.final_val_wmcll <= median

    def test_tie_goes_to_earlier_trial(self):
        results = [TrialResult(0, 1e-4, 0.5, 3), TrialResult(1, 2e-4, 0.5, 3)]
        best = min(results, key=lambda r: (r.final_val_wmcll, r.trial))
        assert best.trial == 0

    def test_deterministic(self, rng):
        X, y = separable_dataset(rng, n=30)
        config = TrainConfig(max_epochs=2, batch_size=8)
        best1, r1 = random_search(X, y, X, y, config, STAGE2_CLASSES,
                                  trials=4, seed=9)
        best2, r2 = random_search(X, y, X, y, config, STAGE2_CLASSES,
                                  trials=4, seed=9)
        assert best1 == best2 and r1 == r2


def test_trials_csv(tmp_path):
    from clotpipe.trainer import write_trials_csv

    results = [TrialResult(0, 1.5e-4, 0.41, 12), TrialResult(1, 3.2e-5, 0.55, 9)]
    path = tmp_path / "trials.csv"
    write_trials_csv(path, results)
    lines = path.read_text().splitlines()
    assert lines[0] == "trial,lr,final_val_wmcll,epochs_run"
    assert len(lines) == 3
    assert lines[1].startswith("0,")
