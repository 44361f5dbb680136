"""Analytic, sparsity-aware energy estimate normalised to one 16-bit MAC.

Binary-input layers only accumulate (AC) for the inputs that carry a spike;
zero inputs are skipped. A real-valued first layer (direct coding) performs
full 16-bit MACs on every timestep in the standard PE, with its inputs and
weights fetched again each step. The modified PE computes the first layer
once and replays it with shift-accumulates for the remaining ``T - 1`` steps.
Rate coding pays for the Poisson generator per pixel per timestep.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

import numpy as np

from .coding import CodingScheme
from .model import ConfigurationError, ForwardTrace, NetworkSpec, TraceError

MODES = ("standard", "modified_pe")


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class CostModel:
    e_mac16: float = 1.0
    e_ac: float = 0.125
    e_fetch: float = 0.06
    e_poisson: float = 0.01

    def __post_init__(self):
        if min(self.e_mac16, self.e_ac, self.e_fetch, self.e_poisson) < 0:
            raise ValueError("energy costs must be non-negative")
        if not self.e_ac < self.e_mac16:
            raise ValueError("e_ac must be below e_mac16")

    def vector(self) -> np.ndarray:
        return np.array([self.e_mac16, self.e_ac, self.e_fetch, self.e_poisson])


@dataclass
class LayerStat:
    name: str
    ops: int  # synaptic ops per image per timestep at full density
    nonzero: float  # nonzero inputs seen, summed over images and timesteps
    total: float  # inputs seen, summed over images and timesteps
    precision: str  # "binary" | "16-bit"
    pool_outputs: int = 0  # averaging outputs per image per timestep

    @property
    def sparsity(self) -> float:
        """Input density s_l in [0, 1]: the fraction of inputs that are nonzero."""
        return self.nonzero / self.total if self.total else 0.0


@dataclass
class LayerStats:
    layers: list
    pixels: int  # encoder inputs per image per timestep
    images: int = 0

    def __add__(self, other: "LayerStats") -> "LayerStats":
        if [l.name for l in self.layers] != [l.name for l in other.layers]:
            raise TraceError("cannot merge statistics of different networks")
        merged = [replace(a, nonzero=a.nonzero + b.nonzero, total=a.total + b.total)
                  for a, b in zip(self.layers, other.layers)]
        return LayerStats(merged, self.pixels, self.images + other.images)

    def with_sparsity(self, values) -> "LayerStats":
        """Copy with the listed densities (for analysis and tests)."""
        layers = [replace(l, nonzero=float(s), total=1.0) for l, s in zip(self.layers, values)]
        return LayerStats(layers, self.pixels, self.images)


def layer_ops(spec: NetworkSpec) -> list[tuple[int, int]]:
    """(ops per timestep at full density, pooling outputs) for every stage of ``spec``."""
    _, h, w = spec.input_shape
    out = []
    for st in spec.stages:
        if st.kind == "dense":
            out.append((st.n_in * st.n_out, 0))
            continue
        ops = 9 * st.n_in * st.n_out * h * w
        if st.pool:
            h, w = h // 2, w // 2
        out.append((ops, st.n_out * h * w if st.pool else 0))
    return out


def collect_stats(trace: ForwardTrace, spec: NetworkSpec) -> LayerStats:
    """Operation counts and measured input densities for one forward trace."""
    stages = spec.stages
    if len(trace.inputs) != len(stages):
        raise TraceError("trace is incomplete for this network")
    layers = []
    for st, (ops, pool_out) in zip(stages, layer_ops(spec)):
        a = trace.inputs[st.index]
        real_valued = st.index == 0 and spec.scheme is CodingScheme.DIRECT
        layers.append(LayerStat(
            name=f"layer{st.index}", ops=ops,
            nonzero=float(np.count_nonzero(a)), total=float(a.size),
            precision="16-bit" if real_valued else "binary",
            pool_outputs=pool_out,
        ))
    return LayerStats(layers, int(np.prod(spec.input_shape)), trace.inputs[0].shape[1])


def project_stats(measured: LayerStats, spec: NetworkSpec) -> LayerStats:
    """Densities measured on a narrower network, op counts of ``spec``.

    Lets a reduced-width model stand in for sparsity measurement while the
    energy is costed on the full layer shapes. Both networks must have the
    same stage sequence.
    """
    shapes = layer_ops(spec)
    if len(shapes) != len(measured.layers):
        raise TraceError(f"{len(measured.layers)} measured layers for a {len(shapes)}-stage network")
    layers = [replace(l, ops=ops, pool_outputs=pool) for l, (ops, pool) in zip(measured.layers, shapes)]
    return LayerStats(layers, int(np.prod(spec.input_shape)), measured.images)


@dataclass
class LayerEnergy:
    name: str
    ops: int
    sparsity: float
    precision: str
    macs: float
    acs: float
    energy: float


@dataclass
class EnergyReport:
    layers: list
    coding_overhead: float
    total: float
    T: int
    scheme: CodingScheme
    mode: str
    cost: CostModel = field(default_factory=CostModel)

    def csv_lines(self) -> list[str]:
        lines = ["layer,ops,sparsity,precision,energy"]
        for l in self.layers:
            lines.append(f"{l.name},{l.ops},{l.sparsity:.6f},{l.precision},{l.energy:.6e}")
        if self.scheme is CodingScheme.RATE:
            lines.append(f"encoder,0,1.000000,poisson,{self.coding_overhead:.6e}")
        lines.append(f"total,,,,{self.total:.6e}")
        return lines


def _check(scheme, mode):
    if mode not in MODES:
        raise ConfigurationError(f"unknown energy mode {mode!r}")
    if mode == "modified_pe" and scheme is not CodingScheme.DIRECT:
        raise ConfigurationError("the modified PE variant applies to direct coding only")


def _layer_terms(l: LayerStat, T: int, mode: str):
    """(macs, acs, coefficient vector over [e_mac16, e_ac, e_fetch, e_poisson])."""
    if l.precision == "16-bit":
        if mode == "standard":
            macs, acs = l.ops * T, 0.0
            coef = np.array([macs, 0.0, 2.0 * macs, 0.0])
        else:
            macs, acs = float(l.ops), float(l.ops * (T - 1))
            coef = np.array([macs, acs, 2.0 * macs, 0.0])
    else:
        macs, acs = 0.0, l.sparsity * l.ops * T
        coef = np.array([0.0, acs, acs, 0.0])
    coef = coef + np.array([0.0, l.pool_outputs * T, 0.0, 0.0])
    return macs, acs, coef


def energy_terms(stats: LayerStats, scheme, T: int, mode: str = "standard") -> np.ndarray:
    """Total energy as a linear form in the cost constants (coefficient vector)."""
    scheme = CodingScheme.parse(scheme)
    _check(scheme, mode)
    coef = np.zeros(4)
    for l in stats.layers:
        coef += _layer_terms(l, T, mode)[2]
    if scheme is CodingScheme.RATE:
        coef[3] += stats.pixels * T
    return coef


def estimate_energy(stats: LayerStats, cost: CostModel, scheme, T: int, mode: str = "standard") -> EnergyReport:
    scheme = CodingScheme.parse(scheme)
    _check(scheme, mode)
    if T < 1:
        raise ValueError("T must be >= 1")
    first = stats.layers[0].precision
    if (first == "16-bit") != (scheme is CodingScheme.DIRECT):
        raise ConfigurationError("layer statistics were collected under the other coding scheme")
    vec = cost.vector()
    rows = []
    for l in stats.layers:
        macs, acs, coef = _layer_terms(l, T, mode)
        rows.append(LayerEnergy(l.name, l.ops, l.sparsity, l.precision, macs, acs, float(coef @ vec)))
    overhead = cost.e_poisson * stats.pixels * T if scheme is CodingScheme.RATE else 0.0
    total = sum(r.energy for r in rows) + overhead
    return EnergyReport(rows, overhead, total, T, scheme, mode, cost)


@dataclass
class CalibrationCase:
    rate: LayerStats
    direct: LayerStats
    T: int
    target: float  # desired rate/direct energy ratio
    mode: str = "standard"


def predicted_ratios(cost: CostModel, cases) -> np.ndarray:
    vec = cost.vector()
    return np.array([
        (energy_terms(c.rate, "rate", c.T) @ vec) / (energy_terms(c.direct, "direct", c.T, c.mode) @ vec)
        for c in cases
    ])


def _grid_ratios(cases, e_mac, ac, fetch, poisson):
    out = []
    for c in cases:
        r = energy_terms(c.rate, "rate", c.T)
        d = energy_terms(c.direct, "direct", c.T, c.mode)
        num = r[0] * e_mac + r[1] * ac + r[2] * fetch + r[3] * poisson
        den = d[0] * e_mac + d[1] * ac + d[2] * fetch + d[3] * poisson
        out.append(num / den)
    return np.stack(out, axis=-1)


def _search(cases, targets, e_mac, ac_hi, fetch_hi, poisson_hi, refine=3):
    ac_axis = np.linspace(0.0, ac_hi, 41)
    fetch_axis = np.concatenate([[0.0], np.geomspace(1e-3, fetch_hi, 40)])
    poisson_axis = np.concatenate([[0.0], np.geomspace(1e-4, poisson_hi, 80)])
    best = None
    for _ in range(refine + 1):
        A, F, P = np.meshgrid(ac_axis, fetch_axis, poisson_axis, indexing="ij")
        err = ((_grid_ratios(cases, e_mac, A, F, P) - targets) ** 2).sum(axis=-1)
        i = np.unravel_index(np.argmin(err), err.shape)
        best = (float(err[i]), float(A[i]), float(F[i]), float(P[i]))
        ac_axis = _zoom(ac_axis, i[0], 0.0, ac_hi)
        fetch_axis = _zoom(fetch_axis, i[1], 0.0, fetch_hi)
        poisson_axis = _zoom(poisson_axis, i[2], 0.0, poisson_hi)
    return best


def _zoom(axis, i, lo, hi, n=21):
    a = axis[max(i - 1, 0)]
    b = axis[min(i + 1, len(axis) - 1)]
    return np.linspace(max(a, lo), min(b, hi), n)


def calibrate(cost: CostModel, cases, tol: float = 0.1, match_tol: float = 1e-9,
              fetch_max: float = 10.0, poisson_max: float = 1e4) -> CostModel:
    """Fit ``e_ac``, ``e_fetch`` and ``e_poisson`` so predicted rate/direct ratios hit the targets.

    Grid search with three rounds of local refinement, minimising the summed
    squared ratio error. ``e_mac16`` stays the unit. Raises CalibrationError
    when a target is not in (0, 1) or when no admissible model gets every
    ratio within ``tol``.
    """
    cases = list(cases)
    targets = np.array([c.target for c in cases], dtype=float)
    if np.any(targets <= 0) or np.any(targets >= 1):
        raise CalibrationError("target ratios must lie strictly between 0 and 1")
    if np.max(np.abs(predicted_ratios(cost, cases) - targets)) <= match_tol:
        return cost
    e_mac = cost.e_mac16
    ac_hi = np.nextafter(e_mac, 0)
    err, ac, fetch, poisson = _search(cases, targets, e_mac, ac_hi, fetch_max, poisson_max)
    fitted = CostModel(e_mac, min(ac, ac_hi), fetch, poisson)
    worst = float(np.max(np.abs(predicted_ratios(fitted, cases) - targets)))
    if worst <= tol:
        return fitted
    # would the targets be reachable if accumulates were allowed to cost more than a MAC?
    err2, *_ = _search(cases, targets, e_mac, 4.0 * e_mac, fetch_max, poisson_max, refine=1)
    if err2 < err and np.sqrt(err2) <= tol:
        raise CalibrationError("targets require e_ac >= e_mac16, violating the cost-model invariant")
    raise CalibrationError(f"cannot reach targets within {tol}: best worst-case error {worst:.3f}")
