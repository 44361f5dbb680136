"""FGSM epsilon sweep and PGD presets A-D on the T=10 MNIST MLPs of both codings.

    python scripts/robustness_sweep.py --samples 1000 --out runs/robustness.csv
"""

import argparse
import os

from spikecode import attack as A
from spikecode import experiments as X
from spikecode.train import evaluate


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--T", type=int, default=10)
    ap.add_argument("--samples", type=int, default=1000)
    ap.add_argument("--eps", type=float, nargs="+", default=[0, 2 / 255, 4 / 255, 8 / 255, 16 / 255])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--data-dir", default=X.MNIST_DIR)
    ap.add_argument("--cache", default="runs/cache")
    ap.add_argument("--out", default="runs/robustness.csv")
    args = ap.parse_args()

    rows = [A.ATTACK_HEADER]
    for coding in ("rate", "direct"):
        cfg = X.mlp_config(coding, args.T, seed=args.seed)
        train, test = X.load_data(cfg, args.data_dir)
        test = test.subset(args.samples)
        state = X.train_model(cfg, train, cache_dir=args.cache)
        clean = evaluate(state, test, args.T, seed=args.seed)
        attacks = [A.AttackConfig("fgsm", e) for e in args.eps] + list(A.PGD_PRESETS.values())
        for acfg in attacks:
            robust = A.robust_accuracy(state, test, acfg, args.T, args.seed)
            rows.append(A.attack_row(acfg, state.scheme, clean, robust))
            print(rows[-1], flush=True)
    os.makedirs(os.path.dirname(args.out) or ".", exist_ok=True)
    with open(args.out, "w") as fh:
        fh.write("\n".join(rows) + "\n")


if __name__ == "__main__":
    main()
