"""White-box FGSM and PGD attacks against rate- and direct-coded networks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import model as M
from .coding import encode, encoder_input_grad
from .data import Dataset
from .numerics import Prng, uniform_fill
from .train import ModelState, evaluate_metrics


@dataclass(frozen=True)
class AttackConfig:
    method: str = "fgsm"
    epsilon: float = 8 / 255
    alpha: float | None = None
    n: int = 1
    random_start: bool = False
    reuse_draw: bool = False

    def __post_init__(self):
        if self.method not in ("fgsm", "pgd"):
            raise ValueError(f"unknown attack method {self.method!r}")
        if not 0 <= self.epsilon <= 1:
            raise ValueError("epsilon must lie in [0, 1]")
        if self.method == "pgd":
            if self.alpha is None or not 0 <= self.alpha <= self.epsilon:
                raise ValueError("PGD needs 0 <= alpha <= epsilon")
            if self.n < 1:
                raise ValueError("PGD needs n >= 1")


# Named PGD settings [eps, alpha, n] used in the robustness sweep.
PGD_PRESETS = {
    "A": AttackConfig("pgd", 2 / 255, 1 / 255, 10),
    "B": AttackConfig("pgd", 4 / 255, 1 / 255, 10),
    "C": AttackConfig("pgd", 8 / 255, 4 / 255, 10),
    "D": AttackConfig("pgd", 16 / 255, 4 / 255, 10),
}


def input_gradient(state: ModelState, x, y, T: int, prng: Prng | None = None, reduce=None) -> np.ndarray:
    """Gradient of the T-step loss with respect to the image batch ``x``.

    Exact for direct coding. For rate coding the spike train is sampled from
    ``prng`` and the gradient at the spikes is passed straight through.
    """
    enc = encode(x, T, state.scheme, prng)
    logits, trace = state.run(enc, T)
    _, dlogits = M.loss_ce(logits, y)
    grads = state.backward(trace, dlogits, need_input_grad=True)
    g = grads.input.reshape(T, *np.shape(x))
    return encoder_input_grad(g, state.scheme, reduce).astype(x.dtype, copy=False)


def fgsm(state: ModelState, x, y, epsilon: float, T: int, prng: Prng | None = None) -> np.ndarray:
    """``clip(x + eps·sign(grad), 0, 1)`` with sign(0) = 0."""
    if epsilon == 0:
        return x.copy()
    g = input_gradient(state, x, y, T, prng.child(0) if prng is not None else None)
    step = x + x.dtype.type(epsilon) * np.sign(g)
    return np.clip(step, 0, 1)


def pgd(state: ModelState, x, y, cfg: AttackConfig, T: int, prng: Prng | None = None,
        on_iterate=None) -> np.ndarray:
    """Projected sign-gradient ascent inside the L∞ ball of radius ``cfg.epsilon``.

    Iteration k draws its rate-coded spikes from ``prng.child(k)`` (or always
    ``child(0)`` with ``reuse_draw``). ``on_iterate(k, x_k)`` observes iterates.
    """
    dt = x.dtype.type
    lo = x - dt(cfg.epsilon)
    hi = x + dt(cfg.epsilon)
    xk = x.copy()
    if cfg.random_start:
        noise = uniform_fill(prng.child("start"), x.shape, dtype=x.dtype) * dt(2) - dt(1)
        xk = np.clip(np.clip(x + dt(cfg.epsilon) * noise, lo, hi), 0, 1)
    for k in range(cfg.n):
        stream = None if prng is None else prng.child(0 if cfg.reuse_draw else k)
        g = input_gradient(state, xk, y, T, stream)
        xk = np.clip(np.clip(xk + dt(cfg.alpha) * np.sign(g), lo, hi), 0, 1)
        if on_iterate is not None:
            on_iterate(k + 1, xk)
    return xk


def attack_batch(state: ModelState, x, y, cfg: AttackConfig, T: int, prng: Prng) -> np.ndarray:
    if cfg.method == "fgsm":
        return fgsm(state, x, y, cfg.epsilon, T, prng)
    return pgd(state, x, y, cfg, T, prng)


def adversarial_set(state: ModelState, data: Dataset, cfg: AttackConfig, T: int, seed: int,
                    batch_size: int = 256) -> Dataset:
    out = np.empty_like(data.images)
    for b, lo in enumerate(range(0, len(data), batch_size)):
        hi = min(len(data), lo + batch_size)
        out[lo:hi] = attack_batch(state, data.images[lo:hi], data.labels[lo:hi], cfg, T,
                                  Prng(seed, "attack", b))
    return Dataset(out, data.labels, data.split + "-adv", data.n_classes)


def robust_accuracy(state: ModelState, data: Dataset, cfg: AttackConfig, T: int, seed: int = 0,
                    batch_size: int = 256) -> float:
    """Accuracy on the attacked split.

    Attack gradients use the ``"attack"`` streams; the final evaluation uses
    the same ``"eval"`` streams as clean evaluation, so ``eps = 0`` reproduces
    the clean accuracy exactly.
    """
    adv = adversarial_set(state, data, cfg, T, seed, batch_size)
    return evaluate_metrics(state, adv, T, seed, batch_size).accuracy


ATTACK_HEADER = "method,eps,alpha,n,scheme,clean_acc,robust_acc"


def attack_row(cfg: AttackConfig, scheme, clean: float, robust: float) -> str:
    alpha = cfg.epsilon if cfg.method == "fgsm" else cfg.alpha
    n = 1 if cfg.method == "fgsm" else cfg.n
    return f"{cfg.method},{cfg.epsilon:.6f},{alpha:.6f},{n},{scheme.value},{clean:.6f},{robust:.6f}"
