"""Discrete-time leaky integrate-and-fire dynamics with soft reset."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import DimensionError, Tensor


@dataclass(frozen=True)
class LifParams:
    tau_m: float = 2.0
    theta: float = 1.0

    def __post_init__(self):
        if not self.tau_m > 1:
            raise ValueError(f"tau_m must be > 1, got {self.tau_m}")
        if not self.theta > 0:
            raise ValueError(f"theta must be > 0, got {self.theta}")

    @property
    def leak(self) -> float:
        return 1.0 - 1.0 / self.tau_m


def lif_charge(u: Tensor, current: Tensor, params: LifParams) -> Tensor:
    """Pre-reset potential: leaky decay of ``u`` plus the scaled input current."""
    if u.shape != current.shape:
        raise DimensionError(f"state {u.shape} and current {current.shape} differ")
    dt = u.dtype.type
    return dt(params.leak) * u + dt(1.0 / params.tau_m) * current


def lif_step(u: Tensor, current: Tensor, params: LifParams) -> tuple[Tensor, Tensor]:
    """Advance one timestep.

    Returns ``(u_post, spikes)`` where a neuron fires when its charged
    potential reaches ``theta`` and then has ``theta`` subtracted.
    """
    u_pre = lif_charge(u, current, params)
    spikes = (u_pre >= params.theta).astype(u_pre.dtype)
    return u_pre - u_pre.dtype.type(params.theta) * spikes, spikes


def surrogate_grad(u: Tensor, theta: float) -> Tensor:
    """Triangular stand-in for d(spike)/du, peaked at ``theta`` with support (0, 2·theta)."""
    if not theta > 0:
        raise ValueError("theta must be > 0")
    u = np.asarray(u)
    dt = u.dtype.type if u.dtype.kind == "f" else np.float64
    return np.maximum(dt(0), dt(1) - np.abs((u - dt(theta)) / dt(theta)))


def output_accumulate(u: Tensor, current: Tensor, params: LifParams, leak: bool = False) -> Tensor:
    """Integrate-only output neuron: no spiking, no reset, leak off by default."""
    if u.shape != current.shape:
        raise DimensionError(f"state {u.shape} and current {current.shape} differ")
    dt = u.dtype.type
    decay = dt(params.leak) if leak else dt(1)
    return decay * u + dt(1.0 / params.tau_m) * current
