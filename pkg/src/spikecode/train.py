"""Adam, step learning-rate schedule, epoch loop and evaluation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import model as M
from .coding import CodingScheme, encode
from .config import RunConfig
from .data import Dataset, random_hflip
from .neuron import LifParams
from .numerics import Prng


INIT_SAMPLES = 128  # training images used by the data-driven init


class TrainingError(RuntimeError):
    pass


@dataclass
class ModelState:
    spec: M.NetworkSpec
    params: M.ParamSet
    lif: LifParams = field(default_factory=LifParams)
    detach_reset: bool = False
    output_leak: bool = False

    @classmethod
    def from_config(cls, cfg: RunConfig) -> "ModelState":
        spec, params = M.build_network(cfg.arch, cfg.dataset, cfg.scheme, Prng(cfg.seed, "init"), cfg.width)
        return cls(spec, params, LifParams(cfg.tau_m, cfg.theta), cfg.detach_reset, cfg.output_leak)

    @property
    def scheme(self) -> CodingScheme:
        return self.spec.scheme

    def run(self, encoded, T):
        return M.forward(self.spec, self.params, encoded, T, self.lif, self.output_leak)

    def backward(self, trace, dL_dlogits, need_input_grad=False) -> M.Gradients:
        return M.backward_stbp(self.spec, self.params, trace, dL_dlogits, self.lif,
                               self.detach_reset, need_input_grad)


@dataclass
class OptimState:
    m: dict
    v: dict
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    base_lr: float = 1e-4

    @classmethod
    def like(cls, params, base_lr=1e-4, **kw) -> "OptimState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()}, base_lr=base_lr, **kw)


def adam_step(params: dict, grads: dict, opt: OptimState, lr: float):
    """One bias-corrected Adam update, in place. Returns ``(params, opt)``."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            bad = int(np.size(g) - np.count_nonzero(np.isfinite(g)))
            raise TrainingError(f"non-finite gradient for {name} ({bad} entries) at step {opt.step + 1}")
    opt.step += 1
    bc1 = 1.0 - opt.beta1 ** opt.step
    bc2 = 1.0 - opt.beta2 ** opt.step
    for name, p in params.items():
        g = grads[name]
        dt = p.dtype.type
        m, v = opt.m[name], opt.v[name]
        m *= dt(opt.beta1)
        m += dt(1.0 - opt.beta1) * g
        v *= dt(opt.beta2)
        v += dt(1.0 - opt.beta2) * (g * g)
        if lr:
            p -= dt(lr) * (m / dt(bc1)) / (np.sqrt(v / dt(bc2)) + dt(opt.eps))
    return params, opt


@dataclass(frozen=True)
class Schedule:
    total_epochs: int
    base_lr: float = 1e-4
    factor: float = 10.0

    @property
    def decay_epochs(self) -> tuple[int, ...]:
        # drop points that would land at or past the last epoch (only for E < 4)
        points = sorted({math.ceil(0.5 * self.total_epochs), math.ceil(0.75 * self.total_epochs)})
        return tuple(p for p in points if p < self.total_epochs)


def lr_at(schedule: Schedule, epoch: int) -> float:
    if not 0 <= epoch < schedule.total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {schedule.total_epochs})")
    passed = sum(epoch >= d for d in schedule.decay_epochs)
    return schedule.base_lr / schedule.factor ** passed


@dataclass
class EpochMetrics:
    loss: float
    accuracy: float
    avg_spike_rate: float
    lr: float
    spikes: float = 0.0


def _batches(n, batch_size):
    for start in range(0, n, batch_size):
        yield start, min(n, start + batch_size)


def train_epoch(state: ModelState, opt: OptimState, data: Dataset, cfg: RunConfig, epoch: int,
                lr: float | None = None) -> EpochMetrics:
    """One seeded pass over ``data``: shuffle, augment, encode, forward, STBP, Adam."""
    if lr is None:
        lr = lr_at(Schedule(cfg.epochs, cfg.base_lr), epoch)
    order = Prng(cfg.seed, "shuffle", epoch).generator.permutation(len(data))
    total_loss = correct = spikes = slots = 0.0
    for b, (lo, hi) in enumerate(_batches(len(data), cfg.batch_size)):
        idx = order[lo:hi]
        x = data.images[idx]
        y = data.labels[idx]
        if cfg.use_flip:
            x = random_hflip(x, Prng(cfg.seed, "flip", epoch, b))
        enc = encode(x, cfg.T, state.scheme, Prng(cfg.seed, "encode", epoch, b))
        logits, trace = state.run(enc, cfg.T)
        loss, dlogits = M.loss_ce(logits, y)
        grads = state.backward(trace, dlogits)
        adam_step(state.params, grads.params, opt, lr)
        total_loss += loss * len(idx)
        correct += float(np.sum(M.predict(logits) == y))
        s, n = M.spike_statistics(trace)
        spikes += s
        slots += n
    n = len(data)
    return EpochMetrics(total_loss / n, correct / n, spikes / slots if slots else 0.0, lr, spikes)


def evaluate_metrics(state: ModelState, data: Dataset, T: int, seed: int, batch_size: int = 256,
                     draws: int = 1, on_trace=None, lr: float = float("nan")) -> EpochMetrics:
    """Loss, top-1 accuracy and hidden spike rate on ``data``.

    Rate coding draws its spikes from ``Prng(seed, "eval", ...)`` so repeated
    calls agree. ``draws > 1`` averages the logits over independent encodings.
    ``on_trace(trace, lo, hi)`` sees every forward trace (used for sparsity).
    """
    total_loss = correct = spikes = slots = 0.0
    for b, (lo, hi) in enumerate(_batches(len(data), batch_size)):
        x = data.images[lo:hi]
        y = data.labels[lo:hi]
        logits = 0.0
        for d in range(draws):
            enc = encode(x, T, state.scheme, Prng(seed, "eval", b, d))
            out, trace = state.run(enc, T)
            logits = logits + out
            s, n = M.spike_statistics(trace)
            spikes += s
            slots += n
            if on_trace is not None:
                on_trace(trace, lo, hi)
        logits = logits / draws
        loss, _ = M.loss_ce(logits, y)
        total_loss += loss * (hi - lo)
        correct += float(np.sum(M.predict(logits) == y))
    n = len(data)
    return EpochMetrics(total_loss / n, correct / n, spikes / slots if slots else 0.0, lr, spikes)


def evaluate(state: ModelState, data: Dataset, T: int, seed: int = 0, batch_size: int = 256,
             draws: int = 1) -> float:
    return evaluate_metrics(state, data, T, seed, batch_size, draws).accuracy


METRICS_HEADER = "epoch,split,loss,accuracy,avg_spike_rate,lr"


def metrics_row(epoch: int, split: str, m: EpochMetrics) -> str:
    return f"{epoch},{split},{m.loss:.6f},{m.accuracy:.6f},{m.avg_spike_rate:.6f},{m.lr:.3e}"


def fit(cfg: RunConfig, train: Dataset, test: Dataset | None = None, state: ModelState | None = None,
        opt: OptimState | None = None, start_epoch: int = 0, stop_epoch: int | None = None,
        on_epoch=None, log=None) -> tuple[ModelState, OptimState, list[str]]:
    """Train epochs ``start_epoch .. stop_epoch-1`` and return CSV rows (no header).

    ``on_epoch(epoch, state, opt)`` runs after each epoch (checkpointing).
    """
    if state is None:
        state = ModelState.from_config(cfg)
        if cfg.init == "data":
            x = train.images[:INIT_SAMPLES]
            M.rescale_init(state.spec, state.params, encode(x, cfg.T, state.scheme, Prng(cfg.seed, "init", "data")),
                           state.lif)
    opt = opt or OptimState.like(state.params, cfg.base_lr)
    stop = cfg.epochs if stop_epoch is None else stop_epoch
    schedule = Schedule(cfg.epochs, cfg.base_lr)
    rows = []
    for epoch in range(start_epoch, stop):
        lr = lr_at(schedule, epoch)
        tm = train_epoch(state, opt, train, cfg, epoch, lr)
        rows.append(metrics_row(epoch, "train", tm))
        if test is not None:
            em = evaluate_metrics(state, test, cfg.T, cfg.seed, draws=cfg.eval_draws, lr=lr)
            rows.append(metrics_row(epoch, "test", em))
        if log:
            log("\n".join(rows[-2 if test is not None else -1:]))
        if on_epoch:
            on_epoch(epoch, state, opt)
    return state, opt, rows
