"""Input coding: Poisson rate coding and direct (repeated real-valued) coding."""

from __future__ import annotations

import enum

import numpy as np

from .numerics import Prng, Tensor, uniform_fill


class CodingScheme(str, enum.Enum):
    RATE = "rate"
    DIRECT = "direct"

    @classmethod
    def parse(cls, value) -> "CodingScheme":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unsupported coding scheme {value!r}; expected 'rate' or 'direct'") from None


def rate_encode(image: Tensor, T: int, prng: Prng) -> Tensor:
    """Bernoulli-per-timestep spike train of shape ``(T, *image.shape)``.

    At every step a pixel of intensity ``p`` fires iff a fresh uniform draw is
    below ``p``, so the expected count over ``T`` steps is ``p·T``.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    image = np.asarray(image)
    if image.size and (image.min() < 0 or image.max() > 1):
        raise ValueError("pixel intensities must lie in [0, 1]")
    u = uniform_fill(prng, (T, *image.shape), dtype=image.dtype if image.dtype.kind == "f" else np.float32)
    return (u < image).astype(u.dtype)


def direct_prepare(image: Tensor, T: int) -> Tensor:
    """Repeat the real-valued image over ``T`` timesteps (read-only broadcast view)."""
    if T < 1:
        raise ValueError("T must be >= 1")
    image = np.asarray(image)
    return np.broadcast_to(image, (T, *image.shape))


def encode(image: Tensor, T: int, scheme, prng: Prng | None = None) -> Tensor:
    scheme = CodingScheme.parse(scheme)
    if scheme is CodingScheme.RATE:
        if prng is None:
            raise ValueError("rate coding needs a Prng")
        return rate_encode(image, T, prng)
    return direct_prepare(image, T)


def encoder_input_grad(per_timestep_grads: Tensor, scheme, reduce: str | None = None) -> Tensor:
    """Collapse gradients at the encoded input (leading time axis) onto the image.

    Direct coding repeats the image, so the exact image gradient is the sum over
    timesteps. The Poisson sampler is not differentiable; rate coding passes the
    gradient straight through and averages it over time. ``reduce`` overrides
    the default reduction ("mean" or "sum").
    """
    scheme = CodingScheme.parse(scheme)
    if reduce is None:
        reduce = "mean" if scheme is CodingScheme.RATE else "sum"
    if reduce == "mean":
        return per_timestep_grads.mean(axis=0)
    if reduce == "sum":
        return per_timestep_grads.sum(axis=0)
    raise ValueError(f"unknown reduction {reduce!r}")
