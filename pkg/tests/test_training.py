import numpy as np
import pytest

from alignment_engine.objective import GradientSet
from alignment_engine.optimizer import AdamState, adam_step
from alignment_engine.semantics import PARAMETER_GROUPS, init_model
from alignment_engine.trainer import HISTORY_COLUMNS, check_training_set, history_frame, train
from middleware.guards import DatasetError, EmptyInputError


def _constant_grads(model, value):
    return GradientSet({name: np.full_like(p, value) for name, p in model.parameters().items()})


# ── Adam ──────────────────────────────────────────────────────────────────────

def test_first_adam_step_moves_by_lr_against_the_gradient_sign():
    model = init_model(4, 2, seed=0)
    grads = GradientSet({name: np.where(np.arange(p.size).reshape(p.shape) % 2 == 0, 3.0, -0.5)
                         for name, p in model.parameters().items()})
    updated, state = adam_step(model, AdamState.zeros(model), grads, lr=0.01)
    assert state.t == 1
    for name in PARAMETER_GROUPS:
        delta = getattr(updated, name) - getattr(model, name)
        np.testing.assert_allclose(delta, -0.01 * np.sign(grads[name]), rtol=1e-6)


def test_zero_gradient_leaves_parameters_unchanged():
    model = init_model(4, 2, seed=1)
    updated, _ = adam_step(model, AdamState.zeros(model), _constant_grads(model, 0.0))
    for name in PARAMETER_GROUPS:
        np.testing.assert_array_equal(getattr(updated, name), getattr(model, name))


def test_adam_step_is_functional():
    model = init_model(4, 2, seed=2)
    state = AdamState.zeros(model)
    grads = _constant_grads(model, 0.3)
    a, state_a = adam_step(model, state, grads)
    b, state_b = adam_step(model, state, grads)
    assert state.t == 0
    for name in PARAMETER_GROUPS:
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
        np.testing.assert_array_equal(state_a.m[name], state_b.m[name])


# ── Training loop ─────────────────────────────────────────────────────────────

def test_training_is_deterministic(tiny_data, tiny_cfg):
    train_set, _ = tiny_data
    first = train(train_set, tiny_cfg)
    second = train(train_set, tiny_cfg)
    for name in PARAMETER_GROUPS:
        np.testing.assert_array_equal(getattr(first.model, name), getattr(second.model, name))
    assert [b.total for b in first.history] == [b.total for b in second.history]


def test_history_has_one_row_per_epoch(tiny_data, tiny_cfg):
    train_set, _ = tiny_data
    seen = []
    result = train(train_set, tiny_cfg, on_epoch=lambda epoch, loss: seen.append(epoch))
    assert len(result.history) == tiny_cfg.epochs
    assert seen == [1, 2]
    frame = history_frame(result.history)
    assert list(frame.columns) == HISTORY_COLUMNS
    assert frame["epoch"].tolist() == [1, 2]
    assert result.final == result.history[-1]


def test_zero_learning_rate_keeps_the_initial_model(tiny_data, tiny_cfg):
    train_set, _ = tiny_data
    cfg = tiny_cfg.with_overrides(lr=0.0, epochs=3)
    result = train(train_set, cfg)
    initial = init_model(train_set[0].grid.d, cfg.n_subspaces, cfg.seed, cfg.head_noise, cfg.fuse_noise)
    for name in PARAMETER_GROUPS:
        np.testing.assert_array_equal(getattr(result.model, name), getattr(initial, name))
    totals = [b.total for b in result.history]
    assert totals == pytest.approx([totals[0]] * 3, rel=1e-12)


def test_training_reduces_the_loss(tiny_data, tiny_cfg):
    train_set, _ = tiny_data
    result = train(train_set, tiny_cfg.with_overrides(lr=1e-2, epochs=5))
    assert result.history[-1].total < result.history[0].total


def test_training_needs_both_labels(tiny_data, tiny_cfg):
    train_set, _ = tiny_data
    normals = [s for s in train_set if s.label == 0]
    with pytest.raises(DatasetError):
        train(normals, tiny_cfg)
    with pytest.raises(EmptyInputError):
        check_training_set([])
