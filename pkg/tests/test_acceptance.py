"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` (about 35 minutes on one CPU core).
Setting ``SPIKECODE_CACHE`` to a directory reuses trained models between runs.
"""

import json
import os
import time

import numpy as np
import pytest

from spikecode import attack as A
from spikecode import cli
from spikecode import energy as E
from spikecode import experiments as X
from spikecode import model as M
from spikecode import train as TR
from spikecode.coding import direct_prepare, encoder_input_grad, rate_encode
from spikecode.data import FormatError, cifar_split, load_cifar, load_mnist, mnist_split
from spikecode.neuron import LifParams
from spikecode.numerics import Prng
from conftest import CIFAR10_DIR, MNIST_DIR
from oracles import rel_err, unrolled_gradients
from test_model import random_case, run_ours

CACHE = os.environ.get("SPIKECODE_CACHE")
TIMESTEPS = (2, 4, 10)
N_ATTACK = 1000


@pytest.fixture
def verdict(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'} | {detail}")
        assert ok, detail
    return emit


def require(path, what):
    if not os.path.exists(path):
        pytest.fail(f"{what} not found at {path}")


# ---------------------------------------------------------------- fixtures

@pytest.fixture(scope="module")
def mnist():
    require(os.path.join(MNIST_DIR, "train-images-idx3-ubyte"), "MNIST IDX files")
    return mnist_split(MNIST_DIR, "train"), mnist_split(MNIST_DIR, "test")


@pytest.fixture(scope="module")
def mlp_models(mnist):
    train, _ = mnist
    t0 = time.time()
    models = {(c, T): X.train_model(X.mlp_config(c, T), train, cache_dir=CACHE)
              for T in TIMESTEPS for c in ("rate", "direct")}
    return models, time.time() - t0


@pytest.fixture(scope="module")
def attack_split(mnist):
    return mnist[1].subset(N_ATTACK)


# ---------------------------------------------------------------- 1

def test_c1_stbp_matches_unrolled_graph(verdict):
    t0 = time.time()
    worst = 0.0
    cases = [(s, False, sch) for s in range(8) for sch in ("direct", "rate")]
    cases += [(100 + s, True, sch) for s in range(4) for sch in ("direct", "rate")]
    for seed, conv, scheme in cases:
        spec, params, enc, labels, T = random_case(seed, conv, scheme)
        logits, grads, _ = run_ours(spec, params, enc, labels, T)
        ref_logits, ref, ref_x = unrolled_gradients(spec, params, enc, labels, 2.0, 1.0)
        errs = [rel_err(logits, ref_logits), rel_err(grads.input, ref_x)]
        errs += [rel_err(grads.params[k], ref[k]) for k in params]
        worst = max(worst, *errs)
    dt = time.time() - t0
    verdict(1, len(cases) >= 20 and worst <= 1e-6 and dt < 60,
            f"{len(cases)} networks, max rel err {worst:.2e} (<= 1e-6), {dt:.1f}s")


# ---------------------------------------------------------------- 2

def _fd(f, x, h=1e-6):
    g = np.zeros_like(x)
    for i in np.ndindex(*x.shape):
        p, m = x.copy(), x.copy()
        p[i] += h
        m[i] -= h
        g[i] = (f(p) - f(m)) / (2 * h)
    return g


def _loss(spec, params, x, labels, T, lif, leak=False, encoded=None):
    enc = direct_prepare(x, T) if encoded is None else encoded
    return M.loss_ce(M.forward(spec, params, enc, T, lif, leak)[0], labels)[0]


def _smooth_errors(spec, params, x, labels, T, leak=False, encoded=None):
    lif = LifParams()
    enc = direct_prepare(x, T) if encoded is None else encoded
    logits, trace = M.forward(spec, params, enc, T, lif, leak)
    assert not any(s.any() for s in trace.spikes), "a hidden neuron crossed threshold"
    _, g = M.loss_ce(logits, labels)
    grads = M.backward_stbp(spec, params, trace, g, lif, need_input_grad=True)
    errs = {}
    for name in params:
        def f(w, name=name):
            return _loss(spec, {**params, name: w}, x, labels, T, lif, leak, encoded)
        fd = _fd(f, params[name])
        errs[name] = rel_err(grads.params[name], fd) if np.abs(fd).max() > 0 else np.abs(grads.params[name]).max()
    if encoded is None:
        fd = _fd(lambda z: _loss(spec, params, z, labels, T, lif, leak), x)
        errs["input"] = rel_err(encoder_input_grad(grads.input, spec.scheme), fd)
    return errs


def test_c2_smooth_regime_finite_differences(verdict):
    t0 = time.time()
    rng = np.random.default_rng(0)
    errs = {}
    # a single dense layer straight into the accumulator is smooth in inputs and weights
    one = M.NetworkSpec("custom", "custom", M.CodingScheme.DIRECT, (1, 2, 3), 4,
                        (M.Layer("flatten"), M.Layer("dense", 6, 4)))
    p1 = {"layer0.weight": rng.normal(size=(6, 4)), "layer0.bias": rng.normal(size=4)}
    x = rng.random((3, 1, 2, 3))
    y = np.array([0, 3, 1])
    for leak in (False, True):
        errs.update({f"1L/leak={leak}/{k}": v for k, v in _smooth_errors(one, p1, x, y, 4, leak).items()})
    # binary rate frames as a fixed input
    rate_spec = M.NetworkSpec("custom", "custom", M.CodingScheme.RATE, (1, 2, 3), 4, one.layers)
    frames = rate_encode(x, 4, Prng(1)).astype(np.float64)
    errs.update({f"1L/rate/{k}": v for k, v in _smooth_errors(rate_spec, p1, x, y, 4, encoded=frames).items()})
    # two layers with small weights and negative hidden bias: no hidden neuron crosses threshold
    # and all hidden potentials stay outside the surrogate support
    two = M.NetworkSpec("custom", "custom", M.CodingScheme.DIRECT, (1, 2, 3), 4,
                        (M.Layer("flatten"), M.Layer("dense", 6, 5), M.Layer("dense", 5, 4)))
    p2 = {"layer0.weight": 0.05 * rng.normal(size=(6, 5)), "layer0.bias": np.full(5, -0.5),
          "layer1.weight": rng.normal(size=(5, 4)), "layer1.bias": rng.normal(size=4)}
    errs.update({f"2L/{k}": v for k, v in _smooth_errors(two, p2, x, y, 4).items()})
    worst = max(errs.values())
    dt = time.time() - t0
    verdict(2, worst <= 1e-3 and dt < 60, f"{len(errs)} gradient blocks, max rel err {worst:.2e} (<= 1e-3), {dt:.1f}s")


# ---------------------------------------------------------------- 3

def test_c3_rate_encoder_statistics(verdict):
    t0 = time.time()
    p = np.round(np.arange(1, 10) / 10, 1).reshape(1, 1, 3, 3)
    frames = rate_encode(p, 10_000, Prng(2024, "c3"))
    binary = set(np.unique(frames)) <= {0.0, 1.0}
    dev = float(np.abs(frames.mean(axis=0) - p).max())
    dt = time.time() - t0
    verdict(3, binary and dev < 0.02 and dt < 10, f"max |rate - p| = {dev:.4f} (< 0.02), binary={binary}, {dt:.1f}s")


# ---------------------------------------------------------------- 4

def test_c4_accuracy_trend(mlp_models, mnist, verdict):
    models, train_s = mlp_models
    test = mnist[1]
    acc = {k: TR.evaluate(s, test, k[1], seed=0) for k, s in models.items()}
    gap = {T: acc["direct", T] - acc["rate", T] for T in TIMESTEPS}
    a = acc["rate", 10] >= 0.95 and acc["direct", 10] >= 0.95
    b = gap[2] >= 0 and gap[4] >= 0
    c = gap[2] > gap[10]
    table = ", ".join(f"T={T}: rate {acc['rate', T]:.4f} direct {acc['direct', T]:.4f}" for T in TIMESTEPS)
    verdict(4, a and b and c, f"{table}; (a)={a} (b)={b} (c)={c}; training {train_s / 60:.1f} min")


# ---------------------------------------------------------------- 5

def test_c5_robustness_trend(mlp_models, attack_split, verdict):
    models, _ = mlp_models
    t0 = time.time()
    fgsm = {c: A.robust_accuracy(models[c, 10], attack_split, A.AttackConfig("fgsm", 8 / 255), 10)
            for c in ("rate", "direct")}
    pgd = {(c, k): A.robust_accuracy(models[c, 10], attack_split, A.PGD_PRESETS[k], 10)
           for c in ("rate", "direct") for k in ("A", "D")}
    dt = time.time() - t0
    gap = fgsm["rate"] - fgsm["direct"]
    order = all(pgd[c, "D"] <= pgd[c, "A"] for c in ("rate", "direct"))
    pgd_s = ", ".join(f"{c} A {pgd[c, 'A']:.3f} D {pgd[c, 'D']:.3f}" for c in ("rate", "direct"))
    verdict(5, gap >= 0.05 and order and dt < 600,
            f"FGSM 8/255 rate {fgsm['rate']:.3f} direct {fgsm['direct']:.3f} gap {100 * gap:.1f} pp (>= 5); "
            f"PGD {pgd_s}; {dt:.0f}s")


# ---------------------------------------------------------------- 6

def test_c6_attack_invariants(mlp_models, attack_split, verdict):
    models, _ = mlp_models
    t0 = time.time()
    x_all, y_all = attack_split.images, attack_split.labels
    worst, in_box, same, count = 0.0, True, True, 0
    preset = A.PGD_PRESETS["D"]

    def check(x, eps):
        def cb(k, xk):
            nonlocal worst, in_box
            worst = max(worst, float(np.abs(xk.astype(np.float64) - x).max()) - eps)
            in_box &= bool(xk.min() >= 0 and xk.max() <= 1)
        return cb

    for c in ("rate", "direct"):
        state = models[c, 10]
        for b, lo in enumerate(range(0, N_ATTACK, 250)):
            x, y = x_all[lo:lo + 250], y_all[lo:lo + 250]
            adv = A.fgsm(state, x, y, 8 / 255, 10, Prng(0, "attack", b))
            check(x, 8 / 255)(0, adv)
            A.pgd(state, x, y, preset, 10, Prng(0, "attack", b), on_iterate=check(x, preset.epsilon))
            one = A.pgd(state, x, y, A.AttackConfig("pgd", 8 / 255, 8 / 255, 1), 10, Prng(0, "attack", b))
            same &= one.tobytes() == adv.tobytes()
            count += len(x)
    dt = time.time() - t0
    verdict(6, worst <= 1e-7 and in_box and same and dt < 300,
            f"{count // 2} samples x 2 schemes per method, max excess over eps {worst:.1e} (<= 1e-7), "
            f"in [0,1]={in_box}, pgd(n=1, alpha=eps) == fgsm bitwise: {same}; {dt:.0f}s")


# ---------------------------------------------------------------- 7

def test_c7_energy_ordering_and_calibration(mlp_models, attack_split, verdict):
    models, _ = mlp_models
    t0 = time.time()
    cost = E.CostModel()
    mlp = {c: X.measure_stats(models[c, 10], attack_split, 10) for c in ("rate", "direct")}
    rate_e = E.estimate_energy(mlp["rate"], cost, "rate", 10).total
    direct_e = E.estimate_energy(mlp["direct"], cost, "direct", 10).total
    ordering = rate_e < direct_e

    require(os.path.join(CIFAR10_DIR, "data_batch_1.bin"), "CIFAR-10 binary batches")
    vgg = {}
    for c in ("rate", "direct"):
        cfg = X.vgg5_config(c)
        train, test = X.load_data(cfg, CIFAR10_DIR)
        state = X.train_model(cfg, train, cache_dir=CACHE)
        # sparsity from the reduced model, op counts of the full-width network
        full = M.network_spec("VGG5", "CIFAR10", c)
        vgg[c] = E.project_stats(X.measure_stats(state, test, 10), full)
    cases = [E.CalibrationCase(mlp["rate"], mlp["direct"], 10, X.ENERGY_TARGETS["MLP"]),
             E.CalibrationCase(vgg["rate"], vgg["direct"], 10, X.ENERGY_TARGETS["VGG5"])]
    try:
        fitted = E.calibrate(cost, cases, tol=0.10)
    except E.CalibrationError as err:
        print(err)
        fitted = cost
    pred = E.predicted_ratios(fitted, cases)
    within = bool(np.all(np.abs(pred - [c.target for c in cases]) <= 0.10))
    modified_ok = all(E.estimate_energy(s["direct"], k, "direct", T, "modified_pe").total
                      <= E.estimate_energy(s["direct"], k, "direct", T).total
                      for s in (mlp, vgg) for k in (cost, fitted) for T in (1, 2, 4, 10))
    dt = time.time() - t0
    verdict(7, ordering and within and modified_ok and dt < 900,
            f"MLP default costs rate {rate_e:.3e} < direct {direct_e:.3e}: {ordering}; "
            f"calibrated e_ac={fitted.e_ac:.4f} e_fetch={fitted.e_fetch:.4f} e_poisson={fitted.e_poisson:.4f} "
            f"-> ratios MLP {pred[0]:.3f} VGG5 {pred[1]:.3f} (targets 0.380/0.647 +-0.10); "
            f"modified_pe <= standard: {modified_ok}; {dt / 60:.1f} min")


# ---------------------------------------------------------------- 8

def test_c8_determinism_and_resume(tmp_path, verdict):
    require(os.path.join(MNIST_DIR, "train-images-idx3-ubyte"), "MNIST IDX files")
    t0 = time.time()
    results = []
    for coding in ("rate", "direct"):
        cfg_path = tmp_path / f"{coding}.json"
        cfg_path.write_text(json.dumps(dict(dataset="MNIST", arch="MLP", coding=coding, T=4, epochs=3,
                                            batch_size=64, train_subset=3000, test_subset=1000,
                                            paths=dict(data_dir=MNIST_DIR))))
        runs = {}
        for name in ("a", "b", "part"):
            extra = ["--until", "1"] if name == "part" else []
            assert cli.main(["train", "--config", str(cfg_path), "--out", str(tmp_path / coding / name), *extra]) == 0
        part = tmp_path / coding / "part"
        assert cli.main(["train", "--resume", str(part / "epoch001.snn"), "--out", str(part)]) == 0
        for name in ("a", "b", "part"):
            runs[name] = ((tmp_path / coding / name / "metrics.csv").read_bytes(),
                          (tmp_path / coding / name / "last.snn").read_bytes())
        results.append((coding, runs["a"] == runs["b"], runs["part"] == runs["a"]))
    dt = time.time() - t0
    ok = all(same and resumed for _, same, resumed in results) and dt < 600
    verdict(8, ok, "; ".join(f"{c}: repeat identical={s}, resume identical={r}" for c, s, r in results)
            + f"; {dt:.0f}s")


# ---------------------------------------------------------------- 9

def _rejects(fn):
    try:
        fn()
    except FormatError:
        return True
    return False


def test_c9_format_conformance(tmp_path, verdict):
    require(os.path.join(MNIST_DIR, "train-images-idx3-ubyte"), "MNIST IDX files")
    require(os.path.join(CIFAR10_DIR, "data_batch_1.bin"), "CIFAR-10 binary batches")
    t0 = time.time()
    checks = {}
    for split, n in (("train", 60_000), ("test", 10_000)):
        d = mnist_split(MNIST_DIR, split)
        checks[f"mnist/{split}"] = (len(d) == n and d.images.shape[1:] == (1, 28, 28)
                                    and d.labels.min() == 0 and d.labels.max() == 9
                                    and 0 <= d.images.min() and d.images.max() <= 1)
    for split, n in (("train", 50_000), ("test", 10_000)):
        d = cifar_split(CIFAR10_DIR, 10, split)
        checks[f"cifar10/{split}"] = (len(d) == n and d.images.shape[1:] == (3, 32, 32)
                                      and set(np.unique(d.labels)) == set(range(10)))

    img, lab = os.path.join(MNIST_DIR, "t10k-images-idx3-ubyte"), os.path.join(MNIST_DIR, "t10k-labels-idx1-ubyte")
    raw = open(img, "rb").read()
    bad = tmp_path / "img"
    bad.write_bytes(b"\x00\x00\x08\x04" + raw[4:])
    checks["mnist/bad magic"] = _rejects(lambda: load_mnist(bad, lab))
    bad.write_bytes(raw[:-1])
    checks["mnist/truncated"] = _rejects(lambda: load_mnist(bad, lab))
    craw = open(os.path.join(CIFAR10_DIR, "test_batch.bin"), "rb").read()
    cbad = tmp_path / "c.bin"
    cbad.write_bytes(craw[:-1])
    checks["cifar/truncated"] = _rejects(lambda: load_cifar(cbad, 10))
    cbad.write_bytes(b"\x0a" + craw[1:])
    checks["cifar/label range"] = _rejects(lambda: load_cifar(cbad, 10))
    dt = time.time() - t0
    failed = [k for k, v in checks.items() if not v]
    verdict(9, not failed and dt < 60, f"{len(checks)} checks, failed: {failed or 'none'}; {dt:.1f}s")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
