"""Run configuration: JSON file plus flag overrides, validated up front."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

from .coding import CodingScheme
from .model import ARCHS, DATASETS, ConfigurationError, network_spec

DEFAULT_EPOCHS = {"MNIST": 60, "CIFAR10": 100, "CIFAR100": 100}


@dataclass
class AttackBlock:
    method: str = "fgsm"
    eps: list = field(default_factory=lambda: [2 / 255, 4 / 255, 8 / 255, 16 / 255])
    alpha: float | None = None
    n: int = 10
    samples: int | None = None  # attack only the first N test images
    random_start: bool = False
    reuse_draw: bool = False


@dataclass
class EnergyBlock:
    e_mac16: float = 1.0
    e_ac: float = 0.125
    e_fetch: float = 0.06
    e_poisson: float = 0.01
    mode: str = "standard"
    samples: int = 1000


@dataclass
class PathsBlock:
    data_dir: str = "data"
    out_dir: str = "runs/default"


@dataclass
class RunConfig:
    dataset: str = "MNIST"
    arch: str = "MLP"
    coding: str = "direct"
    T: int = 10
    epochs: int | None = None
    batch_size: int = 128
    base_lr: float = 1e-4
    seed: int = 0
    tau_m: float = 2.0
    theta: float = 1.0
    detach_reset: bool = False
    output_leak: bool = False
    width: float = 1.0
    init: str = "fan_in"  # "data" adds a data-driven rescale of hidden weights
    train_subset: int | None = None
    test_subset: int | None = None
    flip: bool | None = None  # None: on for CIFAR, off for MNIST
    eval_draws: int = 1
    attack: AttackBlock = field(default_factory=AttackBlock)
    energy: EnergyBlock = field(default_factory=EnergyBlock)
    paths: PathsBlock = field(default_factory=PathsBlock)

    @property
    def scheme(self) -> CodingScheme:
        return CodingScheme.parse(self.coding)

    @property
    def use_flip(self) -> bool:
        return self.dataset != "MNIST" if self.flip is None else self.flip

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]


_BLOCKS = {"attack": AttackBlock, "energy": EnergyBlock, "paths": PathsBlock}


def _build(cls, raw: dict, where: str):
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{where or 'config'}: expected an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigurationError(f"unknown config key {where}{unknown[0]!r}")
    kwargs = {}
    for key, value in raw.items():
        if key in _BLOCKS and cls is RunConfig:
            value = _build(_BLOCKS[key], value, f"{key}.")
        kwargs[key] = value
    return cls(**kwargs)


def parse_config(source=None, **overrides) -> RunConfig:
    """Build a RunConfig from a JSON path, JSON text or dict, then apply overrides.

    Overrides use dotted keys for nested blocks (``attack.method``) or the
    ``attack__method`` spelling when passed as keyword arguments.
    """
    if source is None:
        raw = {}
    elif isinstance(source, dict):
        raw = json.loads(json.dumps(source))
    elif isinstance(source, str) and source.lstrip().startswith("{"):
        raw = json.loads(source)
    else:
        with open(source) as fh:
            raw = json.load(fh)
    for key, value in overrides.items():
        if value is None:
            continue
        parts = key.replace("__", ".").split(".")
        node = raw
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    cfg = _build(RunConfig, raw, "")
    validate(cfg)
    return cfg


def _check(cond, key, msg):
    if not cond:
        raise ConfigurationError(f"{key}: {msg}")


def validate(cfg: RunConfig) -> RunConfig:
    cfg.dataset = str(cfg.dataset).upper()
    cfg.arch = str(cfg.arch).upper()
    _check(cfg.dataset in DATASETS, "dataset", f"unsupported dataset {cfg.dataset!r}")
    _check(cfg.arch in ARCHS, "arch", f"unsupported architecture {cfg.arch!r}")
    try:
        cfg.coding = CodingScheme.parse(cfg.coding).value
    except ValueError as exc:
        raise ConfigurationError(f"coding: {exc}") from None
    network_spec(cfg.arch, cfg.dataset, cfg.coding, cfg.width)
    if cfg.epochs is None:
        cfg.epochs = DEFAULT_EPOCHS[cfg.dataset]
    for key in ("T", "epochs", "batch_size", "eval_draws"):
        value = getattr(cfg, key)
        _check(isinstance(value, int) and not isinstance(value, bool) and value >= 1, key,
               f"must be an integer >= 1, got {value!r}")
    _check(cfg.base_lr >= 0, "base_lr", "must be >= 0")
    _check(isinstance(cfg.seed, int) and 0 <= cfg.seed < 2**64, "seed", "must be a 64-bit unsigned integer")
    _check(cfg.tau_m > 1, "tau_m", "must be > 1")
    _check(cfg.theta > 0, "theta", "must be > 0")
    _check(cfg.width > 0, "width", "must be > 0")
    _check(cfg.init in ("fan_in", "data"), "init", f"unsupported init {cfg.init!r}")
    for key in ("train_subset", "test_subset"):
        value = getattr(cfg, key)
        _check(value is None or (isinstance(value, int) and value >= 1), key, "must be a positive integer")
    a = cfg.attack
    a.method = str(a.method).lower()
    _check(a.method in ("fgsm", "pgd"), "attack.method", f"unsupported method {a.method!r}")
    if not isinstance(a.eps, list):
        a.eps = [a.eps]
    _check(all(0 <= e <= 1 for e in a.eps), "attack.eps", "must lie in [0, 1]")
    if a.method == "pgd":
        _check(a.alpha is not None and all(0 <= a.alpha <= e for e in a.eps), "attack.alpha",
               "PGD needs 0 <= alpha <= eps")
        _check(isinstance(a.n, int) and a.n >= 1, "attack.n", "must be >= 1")
    e = cfg.energy
    _check(e.mode in ("standard", "modified_pe"), "energy.mode", f"unsupported mode {e.mode!r}")
    _check(min(e.e_mac16, e.e_ac, e.e_fetch, e.e_poisson) >= 0, "energy", "costs must be >= 0")
    _check(e.e_ac < e.e_mac16, "energy.e_ac", "must be below e_mac16")
    return cfg
