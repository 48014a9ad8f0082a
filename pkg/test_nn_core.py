#!/usr/bin/env python3
"""
Tests for the dense network stack: gradients, Adam and early stopping.
Run: pytest test_nn_core.py -v
"""
import numpy as np
import pytest

from errors import CacheMismatch, ClassOutOfRange, ConfigError, EmptyBatcher, InvalidDims, ShapeMismatch, WidthMismatch
from nn_core import (
    TrainControl,
    adam_step,
    backward,
    forward,
    init_mlp,
    new_adam,
    softmax,
    softmax_xent,
    train_with_early_stopping,
)

EPS = 1e-5
TOL = 1e-4


def rel_error(a, b):
    return abs(a - b) / max(1e-8, abs(a) + abs(b))


def mlp_loss(params, X, y, mode="eval", seed=0):
    logits, cache = forward(params, X, mode=mode, seed=seed)
    loss, grad = softmax_xent(logits, y)
    return loss, grad, cache


# ============================================================================
# Gradients (central finite differences)
# ============================================================================

def test_softmax_xent_gradient():
    rng = np.random.default_rng(0)
    for _ in range(20):
        logits = rng.standard_normal((5, 4))
        y = rng.integers(0, 4, size=5)
        _, grad = softmax_xent(logits, y)
        i, j = rng.integers(0, 5), rng.integers(0, 4)
        up, down = logits.copy(), logits.copy()
        up[i, j] += EPS
        down[i, j] -= EPS
        numeric = (softmax_xent(up, y)[0] - softmax_xent(down, y)[0]) / (2 * EPS)
        assert rel_error(grad[i, j], numeric) < TOL


def check_param_gradients(params, X, y, rng, trials, mode="eval", seed=0):
    _, grad, cache = mlp_loss(params, X, y, mode, seed)
    analytic = backward(params, cache, grad).arrays()
    arrays = params.arrays()
    for _ in range(trials):
        a = rng.integers(0, len(arrays))
        idx = tuple(rng.integers(0, s) for s in arrays[a].shape)
        shifted = []
        for sign in (1, -1):
            copies = [arr.copy() for arr in arrays]
            copies[a][idx] += sign * EPS
            shifted.append(mlp_loss(params.with_arrays(copies), X, y, mode, seed)[0])
        numeric = (shifted[0] - shifted[1]) / (2 * EPS)
        assert rel_error(analytic[a][idx], numeric) < TOL


def test_mlp_gradients_eval_mode():
    rng = np.random.default_rng(1)
    params = init_mlp((3, 5, 4, 2), dropout=0.0, seed=1)
    X = rng.standard_normal((6, 3))
    y = rng.integers(0, 2, size=6)
    check_param_gradients(params, X, y, rng, trials=30)


def test_mlp_gradients_with_fixed_dropout_mask():
    rng = np.random.default_rng(2)
    params = init_mlp((4, 6, 3), dropout=0.3, seed=2)
    X = rng.standard_normal((8, 4))
    y = rng.integers(0, 3, size=8)
    # same seed -> same mask, so the loss is a smooth function of the weights
    check_param_gradients(params, X, y, rng, trials=20, mode="train", seed=[2, 1, 1, 0])


def test_input_gradient():
    rng = np.random.default_rng(3)
    params = init_mlp((3, 4, 2), seed=3)
    X = rng.standard_normal((4, 3))
    y = rng.integers(0, 2, size=4)
    _, grad, cache = mlp_loss(params, X, y)
    _, g_in = backward(params, cache, grad, return_input_grad=True)
    for _ in range(20):
        i, j = rng.integers(0, 4), rng.integers(0, 3)
        up, down = X.copy(), X.copy()
        up[i, j] += EPS
        down[i, j] -= EPS
        numeric = (mlp_loss(params, up, y)[0] - mlp_loss(params, down, y)[0]) / (2 * EPS)
        assert rel_error(g_in[i, j], numeric) < TOL


# ============================================================================
# Network plumbing
# ============================================================================

def test_init_is_seeded():
    a = init_mlp((4, 8, 3), seed=[5, 0])
    b = init_mlp((4, 8, 3), seed=[5, 0])
    assert a.dims == (4, 8, 3)
    assert all(np.array_equal(x, y) for x, y in zip(a.arrays(), b.arrays()))
    assert a.layers[-1].activation == "identity"
    assert a.layers[-1].dropout == 0.0


def test_init_rejects_bad_dims():
    with pytest.raises(InvalidDims):
        init_mlp((4,))
    with pytest.raises(InvalidDims):
        init_mlp((4, 0, 2))
    with pytest.raises(InvalidDims):
        init_mlp((4, 2), dropout=1.0)


def test_inverted_dropout_matches_eval_output_in_expectation():
    params = init_mlp((5, 32, 3), dropout=0.5, seed=4)
    rows = np.random.default_rng(2).standard_normal((4, 5))
    expected, _ = forward(params, rows)
    draws, _ = forward(params, np.repeat(rows, 10000, axis=0), mode="train", seed=11)
    mean = draws.reshape(4, 10000, 3).mean(axis=1)
    assert np.linalg.norm(mean - expected) / np.linalg.norm(expected) < 0.05


def test_eval_mode_ignores_dropout():
    params = init_mlp((3, 16, 2), dropout=0.5, seed=0)
    X = np.ones((2, 3))
    assert np.array_equal(forward(params, X)[0], forward(params, X, seed=99)[0])


def test_forward_checks_width():
    with pytest.raises(WidthMismatch):
        forward(init_mlp((3, 2)), np.ones((2, 4)))


def test_backward_rejects_foreign_cache():
    small = init_mlp((3, 2))
    _, cache = forward(init_mlp((3, 4, 2)), np.ones((2, 3)))
    with pytest.raises(CacheMismatch):
        backward(small, cache, np.zeros((2, 2)))


def test_softmax_rows_sum_to_one():
    probs = softmax(np.random.default_rng(0).standard_normal((10, 5)) * 50)
    assert np.allclose(probs.sum(axis=1), 1.0)


def test_target_out_of_range():
    with pytest.raises(ClassOutOfRange):
        softmax_xent(np.zeros((2, 3)), [0, 3])


# ============================================================================
# Adam
# ============================================================================

def test_adam_descends_on_a_quadratic():
    params = init_mlp((2, 1), seed=0)
    target = np.array([[1.0, -2.0]])
    state = new_adam(params, lr=0.05, weight_decay=0.0)
    for _ in range(300):
        grads = params.with_arrays([2 * (params.layers[0].weight - target), 2 * params.layers[0].bias])
        state, params = adam_step(state, params, grads)
    assert np.allclose(params.layers[0].weight, target, atol=0.05)
    assert state.step == 300


def test_decoupled_decay_shrinks_without_gradient():
    params = init_mlp((3, 2), seed=1)
    zero = params.with_arrays([np.zeros_like(a) for a in params.arrays()])
    state = new_adam(params, lr=0.1, weight_decay=0.5, decoupled=True)
    _, updated = adam_step(state, params, zero)
    assert np.allclose(updated.layers[0].weight, params.layers[0].weight * (1 - 0.05))


def test_coupled_decay_pulls_toward_zero():
    params = init_mlp((3, 2), seed=1)
    zero = params.with_arrays([np.zeros_like(a) for a in params.arrays()])
    state = new_adam(params, lr=1e-3, weight_decay=0.5, decoupled=False)
    _, updated = adam_step(state, params, zero)
    assert np.linalg.norm(updated.layers[0].weight) < np.linalg.norm(params.layers[0].weight)


def test_adam_shape_mismatch():
    params = init_mlp((3, 2), seed=0)
    other = init_mlp((4, 2), seed=0)
    with pytest.raises(ShapeMismatch):
        adam_step(new_adam(params), params, other)


# ============================================================================
# Early stopping
# ============================================================================

def test_early_stopping_keeps_best_epoch():
    scores = [0.5, 0.7, 0.6, 0.6, 0.6, 0.9]
    control = TrainControl(max_epochs=10, patience=3)

    def step(params, batch, epoch, index):
        return params + 1, {"total_loss": 1.0 / epoch}

    best, history = train_with_early_stopping(0, lambda epoch: [None], control,
                                              lambda p: scores[p - 1], step)
    assert best == 2
    assert history.best_epoch == 2
    assert history.stopped_epoch == 5
    assert [r.metric for r in history.records] == [0.5, 0.7, 0.6, 0.6, 0.6]
    assert history.records[1].losses["total_loss"] == 0.5


def test_early_stopping_runs_to_max_epochs():
    control = TrainControl(max_epochs=4, patience=4)
    _, history = train_with_early_stopping(0, lambda epoch: [None, None], control,
                                           lambda p: float(p), lambda p, b, e, i: (p + 1, {}))
    assert history.stopped_epoch == 4
    assert history.best_epoch == 4


def test_empty_batcher():
    with pytest.raises(EmptyBatcher):
        train_with_early_stopping(0, lambda epoch: [], TrainControl(max_epochs=2, patience=1),
                                  lambda p: 0.0, lambda p, b, e, i: (p, {}))


def test_train_control_validation():
    with pytest.raises(ConfigError):
        TrainControl(max_epochs=5, patience=6)
    with pytest.raises(ConfigError):
        TrainControl(batch_size=0)


if __name__ == "__main__":
    import sys
    print("=" * 70)
    print("NN CORE TESTS")
    print("=" * 70)
    sys.exit(pytest.main([__file__, "-v"]))
