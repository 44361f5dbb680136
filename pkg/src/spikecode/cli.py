"""Command-line entry point: ``spikecode train|eval|attack|energy``."""

from __future__ import annotations

import argparse
import logging
import os
import sys

from . import attack as A
from . import energy as E
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .config import RunConfig, parse_config
from .data import FormatError, cifar_split, mnist_split
from .experiments import measure_stats
from .model import ConfigurationError
from .train import METRICS_HEADER, ModelState, OptimState, evaluate_metrics, fit

log = logging.getLogger("spikecode")


def load_split(cfg: RunConfig, split: str):
    root = cfg.paths.data_dir
    if cfg.dataset == "MNIST":
        data = mnist_split(root, split)
    else:
        data = cifar_split(root, 10 if cfg.dataset == "CIFAR10" else 100, split)
    return data.subset(cfg.train_subset if split == "train" else cfg.test_subset)


def make_checkpoint(cfg: RunConfig, state: ModelState, opt: OptimState, epochs_done: int) -> Checkpoint:
    return Checkpoint(cfg.to_dict(), state.params, opt.m, opt.v, opt.step, epochs_done)


def restore(ckpt: Checkpoint) -> tuple[RunConfig, ModelState, OptimState]:
    cfg = parse_config(ckpt.config)
    state = ModelState.from_config(cfg)
    if set(ckpt.params) != set(state.params):
        raise CheckpointError("checkpoint parameters do not match the configured network")
    for name, p in ckpt.params.items():
        if p.shape != state.params[name].shape:
            raise CheckpointError(f"parameter {name} has shape {p.shape}, expected {state.params[name].shape}")
    state.params = {name: ckpt.params[name].copy() for name in state.params}
    opt = OptimState({k: ckpt.adam_m[k].copy() for k in state.params},
                     {k: ckpt.adam_v[k].copy() for k in state.params},
                     step=ckpt.adam_step, base_lr=cfg.base_lr)
    return cfg, state, opt


def _write_lines(path, lines, digest):
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="\n") as fh:
        fh.write(f"# config={digest}\n")
        for line in lines:
            fh.write(line + "\n")
    os.replace(tmp, path)


def cmd_train(args) -> int:
    if args.resume:
        ckpt = load_checkpoint(args.resume)
        cfg, state, opt = restore(ckpt)
        start = ckpt.epoch
        if args.data_dir:
            cfg.paths.data_dir = args.data_dir
    else:
        cfg = parse_config(args.config, seed=args.seed, epochs=args.epochs,
                           **{"paths.data_dir": args.data_dir})
        state = opt = None
        start = 0
    out = args.out or cfg.paths.out_dir
    os.makedirs(out, exist_ok=True)
    metrics_path = os.path.join(out, "metrics.csv")
    rows = []
    if start and os.path.exists(metrics_path):
        with open(metrics_path) as fh:
            lines = [l.rstrip("\n") for l in fh if not l.startswith("#")]
        rows = [l for l in lines[1:] if int(l.split(",", 1)[0]) < start]
    train, test = load_split(cfg, "train"), load_split(cfg, "test")
    stop = min(cfg.epochs, args.until) if args.until else cfg.epochs

    def on_epoch(epoch, st, op):
        ckpt = make_checkpoint(cfg, st, op, epoch + 1)
        save_checkpoint(os.path.join(out, f"epoch{epoch + 1:03d}.snn"), ckpt)
        save_checkpoint(os.path.join(out, "last.snn"), ckpt)

    _, _, new_rows = fit(cfg, train, test, state, opt, start, stop, on_epoch, log.info)
    _write_lines(metrics_path, [METRICS_HEADER] + rows + new_rows, cfg.digest())
    print(f"wrote {metrics_path} ({len(rows) + len(new_rows)} rows) config={cfg.digest()}")
    return 0


def _load_model(args):
    if not args.checkpoint:
        raise CheckpointError(f"{args.command} needs --checkpoint")
    cfg, state, _ = restore(load_checkpoint(args.checkpoint))
    if getattr(args, "data_dir", None):
        cfg.paths.data_dir = args.data_dir
    return cfg, state


def cmd_eval(args) -> int:
    cfg, state = _load_model(args)
    T = args.T or cfg.T
    m = evaluate_metrics(state, load_split(cfg, "test"), T, cfg.seed, draws=cfg.eval_draws)
    print(f"accuracy={m.accuracy:.6f} loss={m.loss:.6f} T={T} scheme={cfg.coding} config={cfg.digest()}")
    return 0


def cmd_attack(args) -> int:
    cfg, state = _load_model(args)
    T = args.T or cfg.T
    test = load_split(cfg, "test")
    if args.samples:
        test = test.subset(args.samples)
    clean = evaluate_metrics(state, test, T, cfg.seed).accuracy
    eps_list = args.eps or cfg.attack.eps
    rows = []
    for eps in eps_list:
        if args.method == "fgsm":
            acfg = A.AttackConfig("fgsm", eps)
        else:
            alpha = args.alpha if args.alpha is not None else cfg.attack.alpha
            acfg = A.AttackConfig("pgd", eps, alpha, args.iters or cfg.attack.n,
                                  cfg.attack.random_start, cfg.attack.reuse_draw)
        robust = A.robust_accuracy(state, test, acfg, T, cfg.seed)
        rows.append(A.attack_row(acfg, state.scheme, clean, robust))
        log.info(rows[-1])
    out = args.out or os.path.join(os.path.dirname(os.path.abspath(args.checkpoint)), f"attack_{args.method}.csv")
    _write_lines(out, [A.ATTACK_HEADER] + rows, cfg.digest())
    print(f"wrote {out} config={cfg.digest()}")
    return 0


def cmd_energy(args) -> int:
    cfg, state = _load_model(args)
    T = args.T or cfg.T
    mode = args.mode or cfg.energy.mode
    e = cfg.energy
    cost = E.CostModel(e.e_mac16, e.e_ac, e.e_fetch, e.e_poisson)
    test = load_split(cfg, "test").subset(args.samples or e.samples)
    stats = measure_stats(state, test, T, cfg.seed)
    report = E.estimate_energy(stats, cost, state.scheme, T, mode)
    out = args.out or os.path.join(os.path.dirname(os.path.abspath(args.checkpoint)), f"energy_{mode}.csv")
    _write_lines(out, report.csv_lines(), cfg.digest())
    print(f"total={report.total:.6e} scheme={cfg.coding} T={T} mode={mode} wrote {out} config={cfg.digest()}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spikecode", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a network and write metrics.csv plus checkpoints")
    t.add_argument("--config")
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--data-dir")
    t.add_argument("--out")
    t.add_argument("--resume", help="continue from a checkpoint")
    t.add_argument("--until", type=int, help="stop after this many completed epochs")
    t.set_defaults(func=cmd_train)

    for name, func in (("eval", cmd_eval), ("attack", cmd_attack), ("energy", cmd_energy)):
        s = sub.add_parser(name)
        s.add_argument("--checkpoint")
        s.add_argument("--T", type=int)
        s.add_argument("--data-dir")
        s.add_argument("--out")
        s.set_defaults(func=func)
        if name == "attack":
            s.add_argument("--method", choices=("fgsm", "pgd"), required=True)
            s.add_argument("--eps", type=float, nargs="+")
            s.add_argument("--alpha", type=float)
            s.add_argument("--iters", type=int)
            s.add_argument("--samples", type=int)
        if name == "energy":
            s.add_argument("--mode", choices=E.MODES)
            s.add_argument("--samples", type=int)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ConfigurationError, CheckpointError, FormatError, E.CalibrationError,
            FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
