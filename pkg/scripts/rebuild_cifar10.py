"""Rebuild the CIFAR-10 binary batches from the ``tfjs-cifar10`` npm package.

That package ships each batch as a lossless 10000×1024 RGB PNG (one image per
row, pixels in row-major HWC order) plus JSON label lists. This script writes
the standard ``data_batch_{1..5}.bin`` / ``test_batch.bin`` files: per record
one label byte followed by the R, G and B planes.

    npm pack tfjs-cifar10 && tar xzf tfjs-cifar10-*.tgz
    python scripts/rebuild_cifar10.py package /root/data/cifar-10-batches-bin
"""

import argparse
import json
import os

import numpy as np
from PIL import Image


def convert(png, labels):
    pixels = np.asarray(Image.open(png).convert("RGB"))
    n = len(pixels)
    if pixels.shape != (n, 1024, 3) or len(labels) != n:
        raise ValueError(f"{png}: unexpected shape {pixels.shape} for {len(labels)} labels")
    planes = pixels.reshape(n, 32, 32, 3).transpose(0, 3, 1, 2).reshape(n, -1)
    return np.concatenate([np.asarray(labels, np.uint8)[:, None], planes], axis=1).tobytes()


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("package_dir")
    ap.add_argument("out_dir")
    args = ap.parse_args()
    os.makedirs(args.out_dir, exist_ok=True)
    with open(os.path.join(args.package_dir, "train_lables.json")) as fh:
        train_labels = json.load(fh)
    with open(os.path.join(args.package_dir, "test_lables.json")) as fh:
        test_labels = json.load(fh)
    jobs = [(f"data_batch_{i}", train_labels[(i - 1) * 10000:i * 10000]) for i in range(1, 6)]
    jobs.append(("test_batch", test_labels))
    for name, labels in jobs:
        raw = convert(os.path.join(args.package_dir, f"{name}.png"), labels)
        with open(os.path.join(args.out_dir, f"{name}.bin"), "wb") as fh:
            fh.write(raw)
        print(f"{name}.bin: {len(raw)} bytes")


if __name__ == "__main__":
    main()
