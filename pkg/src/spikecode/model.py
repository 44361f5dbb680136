"""Spiking network construction, forward simulation and STBP backward pass.

A network is a sequence of *stages*. Each stage is one weighted operation
(dense or 3×3 conv, with bias), optionally followed by 2×2 average pooling of
the synaptic current, and then either an LIF layer (hidden stages) or the
integrate-only output accumulator (last stage). Pooling the current rather
than the spikes keeps every inter-stage activation binary.

Within a stage the weighted operation has no state, so it is applied to all
T timesteps in one batched call; only the membrane recursion runs step by
step. The backward pass mirrors this: a reverse-time recursion produces the
membrane gradients for every step, then one batched call yields the weight
and input gradients accumulated over time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .coding import CodingScheme
from .neuron import LifParams, surrogate_grad

ARCHS = ("MLP", "VGG5", "VGG9")
DATASETS = {
    "MNIST": ((1, 28, 28), 10),
    "CIFAR10": ((3, 32, 32), 10),
    "CIFAR100": ((3, 32, 32), 100),
}


class ConfigurationError(ValueError):
    pass


class TraceError(RuntimeError):
    """Trace and network description disagree."""


@dataclass(frozen=True)
class Layer:
    kind: str  # "dense" | "conv" | "pool" | "flatten"
    n_in: int = 0
    n_out: int = 0

    @property
    def weighted(self) -> bool:
        return self.kind in ("dense", "conv")


@dataclass(frozen=True)
class Stage:
    index: int  # position among weighted layers
    kind: str
    n_in: int
    n_out: int
    flatten: bool  # reshape input to (B, features) first
    pool: bool  # 2×2 average-pool the current
    spiking: bool  # LIF stage (False only for the output accumulator)

    @property
    def weight(self) -> str:
        return f"layer{self.index}.weight"

    @property
    def bias(self) -> str:
        return f"layer{self.index}.bias"


@dataclass(frozen=True)
class NetworkSpec:
    arch: str
    dataset: str
    scheme: CodingScheme
    input_shape: tuple[int, ...]  # per-sample, C×H×W
    n_classes: int
    layers: tuple[Layer, ...]

    @property
    def stages(self) -> tuple[Stage, ...]:
        return _compile(self.layers)

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes = {}
        for st in self.stages:
            if st.kind == "dense":
                shapes[st.weight] = (st.n_in, st.n_out)
            else:
                shapes[st.weight] = (st.n_out, st.n_in, 3, 3)
            shapes[st.bias] = (st.n_out,)
        return shapes


def _compile(layers) -> tuple[Stage, ...]:
    weighted = [i for i, layer in enumerate(layers) if layer.weighted]
    if not weighted:
        raise ConfigurationError("network has no weighted layer")
    stages = []
    for k, i in enumerate(weighted):
        prev = weighted[k - 1] if k else -1
        nxt = weighted[k + 1] if k + 1 < len(weighted) else len(layers)
        between_before = layers[prev + 1:i]
        between_after = layers[i + 1:nxt]
        if any(layer.kind == "pool" for layer in between_before) and k == 0:
            raise ConfigurationError("pooling before the first weighted layer is not supported")
        stages.append(Stage(
            index=k,
            kind=layers[i].kind,
            n_in=layers[i].n_in,
            n_out=layers[i].n_out,
            flatten=any(layer.kind == "flatten" for layer in between_before) or (
                k == 0 and layers[i].kind == "dense"),
            pool=sum(layer.kind == "pool" for layer in between_after) == 1,
            spiking=k + 1 < len(weighted),
        ))
        if sum(layer.kind == "pool" for layer in between_after) > 1:
            raise ConfigurationError("at most one pooling layer between weighted layers")
    if stages[-1].kind != "dense" or stages[-1].pool:
        raise ConfigurationError("the output layer must be a dense layer without pooling")
    return tuple(stages)


ParamSet = dict  # name -> Tensor, insertion-ordered like NetworkSpec.stages


def _vgg_layers(convs, in_ch, side, classes, hidden, width):
    layers = []
    c = in_ch
    for item in convs:
        if item == "P":
            layers.append(Layer("pool"))
            side //= 2
        else:
            out = max(1, int(round(item * width)))
            layers.append(Layer("conv", c, out))
            c = out
    layers.append(Layer("flatten"))
    h = max(1, int(round(hidden * width)))
    layers.append(Layer("dense", c * side * side, h))
    layers.append(Layer("dense", h, classes))
    return layers


def network_spec(arch: str, dataset: str, scheme, width: float = 1.0) -> NetworkSpec:
    arch, dataset = arch.upper(), dataset.upper()
    scheme = CodingScheme.parse(scheme)
    if arch not in ARCHS:
        raise ConfigurationError(f"unknown architecture {arch!r}")
    if dataset not in DATASETS:
        raise ConfigurationError(f"unknown dataset {dataset!r}")
    (c, h, w), classes = DATASETS[dataset]
    if (arch == "MLP") != (dataset == "MNIST"):
        raise ConfigurationError(f"{arch} is not supported on {dataset}")
    if arch == "MLP":
        hidden = max(1, int(round(800 * width)))
        layers = [Layer("flatten"), Layer("dense", c * h * w, hidden), Layer("dense", hidden, classes)]
    elif arch == "VGG5":
        layers = _vgg_layers([64, "P", 128, 128, "P"], c, h, classes, 1024, width)
    else:
        layers = _vgg_layers([64, 64, "P", 128, 128, "P", 256, 256, 256, "P"], c, h, classes, 1024, width)
    return NetworkSpec(arch, dataset, scheme, (c, h, w), classes, tuple(layers))


def init_params(spec: NetworkSpec, prng: nx.Prng, dtype=nx.DTYPE) -> ParamSet:
    """Fan-in scaled uniform weights (bound sqrt(6/fan_in)), zero biases."""
    params = {}
    for st in spec.stages:
        shape = spec.param_shapes()[st.weight]
        fan_in = st.n_in if st.kind == "dense" else st.n_in * 9
        bound = math.sqrt(6.0 / fan_in)
        u = nx.uniform_fill(prng.child(st.weight), shape, dtype=np.float64)
        params[st.weight] = ((2.0 * u - 1.0) * bound).astype(dtype)
        params[st.bias] = np.zeros(st.n_out, dtype=dtype)
    return params


def build_network(arch: str, dataset: str, scheme, prng: nx.Prng, width: float = 1.0,
                  dtype=nx.DTYPE) -> tuple[NetworkSpec, ParamSet]:
    spec = network_spec(arch, dataset, scheme, width)
    return spec, init_params(spec, prng, dtype)


def param_count(params: ParamSet) -> int:
    return sum(int(p.size) for p in params.values())


@dataclass
class ForwardTrace:
    """Per-stage tensors with a leading time axis.

    ``inputs[k]`` is what stage k's weighted op consumed (after flattening);
    ``u_pre[k]`` and ``spikes[k]`` are the pre-reset potentials and spikes of
    hidden stage k. ``repeated_input`` marks a time-invariant first input.
    """

    T: int
    inputs: list = field(default_factory=list)
    u_pre: list = field(default_factory=list)
    spikes: list = field(default_factory=list)
    repeated_input: bool = False
    output_leak: bool = False


def _weighted(st: Stage, params: ParamSet, a: np.ndarray) -> np.ndarray:
    w, b = params[st.weight], params[st.bias]
    if st.kind == "dense":
        out = nx.matmul(a, w) + b
    else:
        out = nx.conv2d(a, w) + b[:, None, None]
    if st.pool:
        out = nx.avgpool2d(out)
    return out


def _lif_run(cur, leak, inv_tau, theta):
    u = np.zeros(cur.shape[1:], dtype=cur.dtype)
    u_pre = np.empty(cur.shape, dtype=cur.dtype)
    spikes = np.empty(cur.shape, dtype=cur.dtype)
    for t in range(cur.shape[0]):
        u = leak * u + inv_tau * cur[t]
        u_pre[t] = u
        spikes[t] = u >= theta
        u = u - theta * spikes[t]
    return u_pre, spikes


def _flatten_time(x):
    return x.reshape(x.shape[0] * x.shape[1], *x.shape[2:])


def forward(spec: NetworkSpec, params: ParamSet, encoded, T: int, lif: LifParams,
            output_leak: bool = False) -> tuple[np.ndarray, ForwardTrace]:
    """Simulate ``T`` steps on ``encoded`` (shape T×B×C×H×W).

    Returns the output potentials after the last step (the logits) and the
    trace needed by :func:`backward_stbp`.
    """
    if encoded.shape[0] != T:
        raise nx.DimensionError(f"encoded input has {encoded.shape[0]} timesteps, expected {T}")
    if tuple(encoded.shape[2:]) != spec.input_shape:
        raise nx.DimensionError(f"sample shape {encoded.shape[2:]} does not match {spec.input_shape}")
    dtype = params[spec.stages[0].weight].dtype
    dt = dtype.type
    repeated = encoded.strides[0] == 0
    trace = ForwardTrace(T=T, repeated_input=repeated, output_leak=output_leak)
    B = encoded.shape[1]
    a = encoded.astype(dtype, copy=False)
    leak, inv_tau, theta = dt(lif.leak), dt(1.0 / lif.tau_m), dt(lif.theta)
    logits = None
    for st in spec.stages:
        if st.flatten:
            a = a.reshape(a.shape[0], B, -1)
        trace.inputs.append(a)
        if st.index == 0 and repeated:
            cur = _weighted(st, params, a[0])
            cur = np.broadcast_to(cur, (T, *cur.shape))
        else:
            cur = _weighted(st, params, _flatten_time(a))
            cur = cur.reshape(T, B, *cur.shape[1:])
        if st.spiking:
            u_pre, spikes = _lif_run(cur, leak, inv_tau, theta)
            trace.u_pre.append(u_pre)
            trace.spikes.append(spikes)
            a = spikes
        else:
            decay = leak if output_leak else dt(1)
            u = np.zeros(cur.shape[1:], dtype=dtype)
            for t in range(T):
                u = decay * u + inv_tau * cur[t]
            logits = u
    return logits, trace


def rescale_init(spec: NetworkSpec, params: ParamSet, encoded, lif: LifParams, target: float = 1.0) -> ParamSet:
    """Data-driven rescaling of hidden-stage weights (in place).

    Going stage by stage, each hidden weight tensor is multiplied so the
    synaptic current on ``encoded`` has standard deviation ``target·θ``. With
    zero biases the current is linear in the weights, so one pass is exact.
    Deep conv stacks fed by sparse spikes otherwise start out silent.
    """
    T, B = encoded.shape[:2]
    dtype = params[spec.stages[0].weight].dtype
    dt = dtype.type
    a = encoded.astype(dtype, copy=False)
    for st in spec.stages[:-1]:
        if st.flatten:
            a = a.reshape(T, B, -1)
        if params[st.bias].any():
            raise ConfigurationError("rescale_init expects zero biases")
        cur = _weighted(st, params, _flatten_time(a))
        std = float(cur.std())
        if std > 0:
            scale = target * lif.theta / std
            params[st.weight] *= dt(scale)
            cur *= dt(scale)
        _, a = _lif_run(cur.reshape(T, B, *cur.shape[1:]), dt(lif.leak), dt(1.0 / lif.tau_m), dt(lif.theta))
    return params


def loss_ce(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and its gradient ``(softmax - onehot) / B``."""
    labels = np.asarray(labels)
    B, K = logits.shape
    if labels.shape != (B,) or labels.min(initial=0) < 0 or labels.max(initial=0) >= K:
        raise ValueError(f"labels must be {B} integers in [0, {K})")
    z = logits.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(logsum - z[np.arange(B), labels]))
    p = np.exp(z - logsum[:, None])
    p[np.arange(B), labels] -= 1.0
    return loss, (p / B).astype(logits.dtype)


@dataclass
class Gradients:
    params: dict
    input: np.ndarray | None = None  # per-timestep gradient at the encoded input


def backward_stbp(spec: NetworkSpec, params: ParamSet, trace: ForwardTrace, dL_dlogits,
                  lif: LifParams, detach_reset: bool = False, need_input_grad: bool = False) -> Gradients:
    """Spatio-temporal backpropagation through the unrolled network.

    Hidden stages run the reverse-time recursion

        g_pre[t]  = s[t]·(dL/do[t] − θ·g_post[t]) + g_post[t]
        g_post[t] = leak · g_pre[t+1]

    with ``s`` the triangular surrogate at the pre-reset potential. With
    ``detach_reset`` the ``−θ·g_post`` term is dropped. The output stage
    only receives ``dL/dlogits`` through the final accumulated potential.
    """
    stages = spec.stages
    if len(trace.inputs) != len(stages) or len(trace.u_pre) != len(stages) - 1:
        raise TraceError("trace does not match the network description")
    T = trace.T
    dtype = params[stages[0].weight].dtype
    dt = dtype.type
    leak, inv_tau, theta = dt(lif.leak), dt(1.0 / lif.tau_m), dt(lif.theta)
    g = np.asarray(dL_dlogits, dtype=dtype)

    if trace.output_leak:
        w = np.array([lif.leak ** (T - 1 - t) for t in range(T)], dtype=dtype) * inv_tau
        grad_cur = w[:, None, None] * g[None]
    else:
        grad_cur = np.broadcast_to(inv_tau * g, (T, *g.shape))

    grads = {}
    input_grad = None
    for st in reversed(stages):
        a = trace.inputs[st.index]
        if st.index < len(stages) - 1:
            # grad_cur currently holds dL/do for this stage's spikes
            u_pre = trace.u_pre[st.index]
            dl_do = grad_cur
            out = np.empty(u_pre.shape, dtype=dtype)
            g_post = np.zeros(u_pre.shape[1:], dtype=dtype)
            for t in range(T - 1, -1, -1):
                s = surrogate_grad(u_pre[t], lif.theta)
                if detach_reset:
                    g_pre = s * dl_do[t] + g_post
                else:
                    g_pre = s * (dl_do[t] - theta * g_post) + g_post
                out[t] = inv_tau * g_pre
                g_post = leak * g_pre
            grad_cur = out
        if st.pool:
            grad_cur = nx.avgpool2d_backward(grad_cur)
        want_input = st.index > 0 or need_input_grad
        if st.index == 0 and trace.repeated_input:
            g_sum = grad_cur.sum(axis=0)
            gw, gb = _param_grads(st, params, a[0], g_sum)
            grad_in = _input_grad(st, params, _flatten_time(grad_cur), a.shape) if want_input else None
        else:
            gflat = _flatten_time(np.ascontiguousarray(grad_cur))
            gw, gb = _param_grads(st, params, _flatten_time(a), gflat)
            grad_in = _input_grad(st, params, gflat, a.shape) if want_input else None
        grads[st.weight] = gw
        grads[st.bias] = gb
        if st.index > 0:
            grad_cur = grad_in.reshape(trace.u_pre[st.index - 1].shape)
        elif grad_in is not None:
            input_grad = grad_in.reshape((T, a.shape[1]) + spec.input_shape)
    ordered = {name: grads[name] for name in params}
    return Gradients(ordered, input_grad)


def _param_grads(st: Stage, params, a, g):
    if st.kind == "dense":
        return a.T @ g, g.sum(axis=0)
    _, gw = nx.conv2d_backward(a, params[st.weight], g, need_input_grad=False)
    return gw, g.sum(axis=(0, 2, 3))


def _input_grad(st: Stage, params, g, a_shape):
    w = params[st.weight]
    if st.kind == "dense":
        gi = g @ w.T
    else:
        gi = nx.conv2d(g, np.ascontiguousarray(w.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1]))
    return gi.reshape(a_shape)


def spike_statistics(trace: ForwardTrace) -> tuple[float, float]:
    """Total hidden spikes and total hidden neuron-timesteps in the trace."""
    total = sum(float(s.sum()) for s in trace.spikes)
    slots = sum(s.size for s in trace.spikes)
    return total, float(slots)


def predict(logits: np.ndarray) -> np.ndarray:
    """Top-1 class; ties resolve to the lowest index."""
    return np.argmax(logits, axis=1)
