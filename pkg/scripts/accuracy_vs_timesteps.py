"""Test accuracy of rate- and direct-coded MLPs on MNIST across timesteps.

    python scripts/accuracy_vs_timesteps.py --T 2 4 10 --out runs/accuracy_vs_T.csv
"""

import argparse
import os
import time

from spikecode import experiments as X
from spikecode.train import evaluate


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--T", type=int, nargs="+", default=[2, 4, 10])
    ap.add_argument("--epochs", type=int, default=X.MLP_PROTOCOL["epochs"])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--data-dir", default=X.MNIST_DIR)
    ap.add_argument("--cache", default="runs/cache")
    ap.add_argument("--out", default="runs/accuracy_vs_T.csv")
    args = ap.parse_args()

    rows = ["coding,T,test_accuracy,train_seconds"]
    for T in args.T:
        for coding in ("rate", "direct"):
            cfg = X.mlp_config(coding, T, epochs=args.epochs, seed=args.seed)
            train, test = X.load_data(cfg, args.data_dir)
            t0 = time.time()
            state = X.train_model(cfg, train, cache_dir=args.cache)
            acc = evaluate(state, test, T, seed=args.seed)
            rows.append(f"{coding},{T},{acc:.4f},{time.time() - t0:.0f}")
            print(rows[-1], flush=True)
    os.makedirs(os.path.dirname(args.out) or ".", exist_ok=True)
    with open(args.out, "w") as fh:
        fh.write("\n".join(rows) + "\n")


if __name__ == "__main__":
    main()
