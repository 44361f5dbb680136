"""Desk-scale experiment protocols shared by ``scripts/`` and the acceptance suite."""

from __future__ import annotations

import os

from . import energy as E
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import RunConfig, parse_config
from .data import Dataset, cifar_split, mnist_split
from .train import ModelState, evaluate_metrics, fit

MNIST_DIR = os.environ.get("SPIKECODE_MNIST", "data/mnist")
CIFAR10_DIR = os.environ.get("SPIKECODE_CIFAR10", "data/cifar-10-batches-bin")

# full MNIST train set, 5 epochs; batch 32 gives enough Adam steps at lr 1e-4
MLP_PROTOCOL = dict(dataset="MNIST", arch="MLP", epochs=5, batch_size=32)
# reduced VGG5 on a 10k CIFAR-10 subset, only used to measure spike sparsity
VGG5_PROTOCOL = dict(dataset="CIFAR10", arch="VGG5", epochs=5, batch_size=32, width=0.125, init="data",
                     train_subset=10_000, test_subset=1_000)
ENERGY_TARGETS = {"MLP": 0.380, "VGG5": 0.647}


def mlp_config(coding: str, T: int, **kw) -> RunConfig:
    return parse_config(dict(MLP_PROTOCOL, coding=coding, T=T, **kw))


def vgg5_config(coding: str, T: int = 10, **kw) -> RunConfig:
    return parse_config(dict(VGG5_PROTOCOL, coding=coding, T=T, **kw))


def load_data(cfg: RunConfig, root: str | None = None) -> tuple[Dataset, Dataset]:
    if cfg.dataset == "MNIST":
        root = root or MNIST_DIR
        train, test = mnist_split(root, "train"), mnist_split(root, "test")
    else:
        root = root or CIFAR10_DIR
        variant = 10 if cfg.dataset == "CIFAR10" else 100
        train, test = cifar_split(root, variant, "train"), cifar_split(root, variant, "test")
    return train.subset(cfg.train_subset), test.subset(cfg.test_subset)


def train_model(cfg: RunConfig, train: Dataset, test: Dataset | None = None, cache_dir: str | None = None,
                log=None) -> ModelState:
    """Train ``cfg`` from scratch; with ``cache_dir`` the final checkpoint is reused across runs."""
    path = os.path.join(cache_dir, f"{cfg.digest()}.snn") if cache_dir else None
    if path and os.path.exists(path):
        state = ModelState.from_config(cfg)
        state.params = load_checkpoint(path).params
        return state
    state, opt, _ = fit(cfg, train, test, log=log)
    if path:
        os.makedirs(cache_dir, exist_ok=True)
        save_checkpoint(path, Checkpoint(cfg.to_dict(), state.params, opt.m, opt.v, opt.step, cfg.epochs))
    return state


def measure_stats(state: ModelState, data: Dataset, T: int, seed: int = 0) -> E.LayerStats:
    """Per-layer input sparsity over ``data``, using the clean-evaluation encodings."""
    parts = []
    evaluate_metrics(state, data, T, seed, on_trace=lambda trace, lo, hi: parts.append(
        E.collect_stats(trace, state.spec)))
    total = parts[0]
    for p in parts[1:]:
        total = total + p
    return total


def energy_ratio(rate: E.LayerStats, direct: E.LayerStats, cost: E.CostModel, T: int,
                 mode: str = "standard") -> float:
    r = E.estimate_energy(rate, cost, "rate", T).total
    d = E.estimate_energy(direct, cost, "direct", T, mode).total
    return r / d

