import os

import numpy as np
import pytest
from hypothesis import given, strategies as st

from spikecode import train as TR
from spikecode.config import parse_config
from spikecode.data import Dataset, mnist_split
from oracles import adam_reference
from conftest import MNIST_DIR

needs_mnist = pytest.mark.skipif(not os.path.exists(os.path.join(MNIST_DIR, "train-images-idx3-ubyte")),
                                 reason="MNIST IDX files not available")


def test_adam_zero_gradient():
    p = {"w": np.ones(3, np.float32)}
    opt = TR.OptimState.like(p)
    TR.adam_step(p, {"w": np.zeros(3, np.float32)}, opt, 1e-3)
    assert opt.step == 1
    np.testing.assert_array_equal(p["w"], 1.0)


def test_adam_first_step_is_bounded_by_lr():
    rng = np.random.default_rng(0)
    p = {"w": rng.normal(size=100).astype(np.float32)}
    before = p["w"].copy()
    g = rng.normal(size=100).astype(np.float32)
    TR.adam_step(p, {"w": g}, TR.OptimState.like(p), 1e-3)
    delta = np.abs(p["w"].astype(np.float64) - before)
    assert np.all(delta <= 1e-3 * (1 + 1e-6) + 1e-7)  # float32 storage rounding of p
    assert np.all(np.sign(before - p["w"]) == np.sign(g))


def test_adam_matches_scalar_reference():
    grad = lambda x: 2 * (x - 3.0)  # noqa: E731
    p = {"x": np.array([0.5])}
    opt = TR.OptimState.like(p)
    ours = []
    for _ in range(5):
        TR.adam_step(p, {"x": grad(p["x"])}, opt, 0.1)
        ours.append(float(p["x"][0]))
    np.testing.assert_allclose(ours, adam_reference(grad, 0.5, 0.1, 5), atol=1e-7, rtol=0)


def test_adam_rejects_nonfinite():
    p = {"w": np.ones(2, np.float32)}
    with pytest.raises(TR.TrainingError, match="w"):
        TR.adam_step(p, {"w": np.array([1.0, np.inf], np.float32)}, TR.OptimState.like(p), 1e-3)


@given(st.floats(-100, 100), st.floats(1e-6, 1e-2))
def test_adam_update_never_exceeds_lr(g, lr):
    p = {"w": np.array([0.0])}
    opt = TR.OptimState.like(p)
    for _ in range(3):
        before = p["w"].copy()
        TR.adam_step(p, {"w": np.array([g])}, opt, lr)
        assert abs(p["w"][0] - before[0]) <= lr * (1 + 1e-6)


def test_lr_schedule_examples():
    s = TR.Schedule(100, 1e-4)
    assert TR.lr_at(s, 10) == 1e-4
    assert TR.lr_at(s, 50) == pytest.approx(1e-5)
    assert TR.lr_at(s, 75) == pytest.approx(1e-6)
    assert TR.lr_at(TR.Schedule(60, 1e-4), 30) == pytest.approx(1e-5)
    assert TR.lr_at(TR.Schedule(60, 1e-4), 29) == 1e-4
    with pytest.raises(ValueError):
        TR.lr_at(s, 100)


@given(st.integers(4, 400))
def test_lr_schedule_shape(E):
    s = TR.Schedule(E, 1.0)
    lrs = [TR.lr_at(s, e) for e in range(E)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))
    assert len(set(lrs)) == 3 and s.decay_epochs[0] < s.decay_epochs[1] < E


def synthetic(n=64, seed=0):
    """Separable toy digits: class k lights up row block k."""
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 10
    x = rng.random((n, 1, 28, 28)).astype(np.float32) * 0.2
    for i, k in enumerate(labels):
        x[i, 0, 2 * k:2 * k + 3, :] = 0.9
    return Dataset(x, labels.astype(np.int64), "train", 10)


def small_cfg(**kw):
    base = dict(dataset="MNIST", arch="MLP", coding="rate", T=3, epochs=2, batch_size=16, width=0.05)
    base.update(kw)
    return parse_config(base)


def test_zero_lr_freezes_parameters():
    cfg = small_cfg()
    state = TR.ModelState.from_config(cfg)
    before = {k: v.copy() for k, v in state.params.items()}
    TR.train_epoch(state, TR.OptimState.like(state.params), synthetic(), cfg, 0, lr=0.0)
    assert all(np.array_equal(before[k], state.params[k]) for k in before)


@pytest.mark.parametrize("coding", ["rate", "direct"])
def test_training_is_deterministic(coding):
    cfg = small_cfg(coding=coding)
    data = synthetic()
    _, _, rows1 = TR.fit(cfg, data, data)
    _, _, rows2 = TR.fit(cfg, data, data)
    assert rows1 == rows2


def test_chance_level_zero_network():
    cfg = small_cfg()
    state = TR.ModelState.from_config(cfg)
    state.params = {k: np.zeros_like(v) for k, v in state.params.items()}
    data = synthetic(100)
    acc = TR.evaluate(state, data, 3, seed=1)
    assert 0.05 <= acc <= 0.15
    assert acc == TR.evaluate(state, data, 3, seed=1)


def test_rate_evaluation_reproducible_with_seed():
    cfg = small_cfg(width=0.1)
    data = synthetic()
    state, _, _ = TR.fit(cfg, data)
    assert TR.evaluate(state, data, 3, seed=9) == TR.evaluate(state, data, 3, seed=9)


@needs_mnist
def test_smoke_training_improves():
    data = mnist_split(MNIST_DIR, "train").subset(8000)
    cfg = parse_config(dict(dataset="MNIST", arch="MLP", coding="direct", T=4, epochs=2, batch_size=128))
    state = TR.ModelState.from_config(cfg)
    opt = TR.OptimState.like(state.params, cfg.base_lr)
    m1 = TR.train_epoch(state, opt, data, cfg, 0)
    m2 = TR.train_epoch(state, opt, data, cfg, 1)
    assert m2.accuracy > m1.accuracy
