"""MNIST IDX and CIFAR binary loaders, plus horizontal-flip augmentation."""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from .numerics import Prng, uniform_fill

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_PIXELS = 3 * 32 * 32


class FormatError(ValueError):
    pass


@dataclass
class Dataset:
    images: np.ndarray  # N×C×H×W float32 in [0, 1]
    labels: np.ndarray  # N int64
    split: str
    n_classes: int

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ValueError(f"{len(self.images)} images but {len(self.labels)} labels")

    def __len__(self):
        return len(self.labels)

    def subset(self, n: int | None) -> "Dataset":
        """The first ``n`` samples (all of them when ``n`` is None)."""
        if n is None or n >= len(self):
            return self
        return Dataset(self.images[:n], self.labels[:n], self.split, self.n_classes)


def _read(path) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()


def _parse_idx(raw: bytes, magic: int, ndim: int, path) -> np.ndarray:
    if len(raw) < 4:
        raise FormatError(f"{path}: truncated header at offset 0")
    (found,) = struct.unpack_from(">I", raw, 0)
    if found != magic:
        raise FormatError(f"{path}: bad magic 0x{found:08x} at offset 0, expected 0x{magic:08x}")
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"{path}: truncated dimension header at offset 4")
    dims = struct.unpack_from(f">{ndim}I", raw, 4)
    need = header + int(np.prod(dims))
    if len(raw) < need:
        raise FormatError(f"{path}: truncated data at offset {len(raw)}, expected {need} bytes")
    if len(raw) > need:
        raise FormatError(f"{path}: {len(raw) - need} trailing bytes after offset {need}")
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def load_mnist(images_path, labels_path, split: str = "train") -> Dataset:
    images = _parse_idx(_read(images_path), IDX_IMAGES_MAGIC, 3, images_path)
    labels = _parse_idx(_read(labels_path), IDX_LABELS_MAGIC, 1, labels_path)
    if len(images) != len(labels):
        raise FormatError(f"{images_path}: {len(images)} images but {labels_path} has {len(labels)} labels")
    x = (images.astype(np.float32) / np.float32(255.0))[:, None]
    return Dataset(np.ascontiguousarray(x), labels.astype(np.int64), split, 10)


def mnist_split(root, split: str = "train") -> Dataset:
    prefix = "train" if split == "train" else "t10k"
    return load_mnist(os.path.join(root, f"{prefix}-images-idx3-ubyte"),
                      os.path.join(root, f"{prefix}-labels-idx1-ubyte"), split)


def load_cifar(paths, variant: int = 10, split: str = "train") -> Dataset:
    """Parse CIFAR binary batches.

    CIFAR-10 records are ``label | 3072 pixels``; CIFAR-100 records are
    ``coarse | fine | 3072 pixels`` and the fine label is kept. Pixels are
    stored as R, G, B planes of 32×32.
    """
    if variant not in (10, 100):
        raise ValueError("variant must be 10 or 100")
    if isinstance(paths, (str, os.PathLike)):
        paths = [paths]
    n_label = 1 if variant == 10 else 2
    stride = n_label + CIFAR_PIXELS
    images, labels = [], []
    for path in paths:
        raw = _read(path)
        if len(raw) == 0 or len(raw) % stride:
            raise FormatError(f"{path}: length {len(raw)} is not a multiple of the {stride}-byte record "
                              f"(offset {len(raw) - len(raw) % stride} starts a partial record)")
        rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, stride)
        lab = rec[:, n_label - 1].astype(np.int64)
        if lab.max() >= variant:
            bad = int(np.argmax(lab >= variant))
            raise FormatError(f"{path}: label {lab[bad]} out of range at offset {bad * stride + n_label - 1}")
        labels.append(lab)
        images.append(rec[:, n_label:].reshape(-1, 3, 32, 32))
    x = np.concatenate(images).astype(np.float32) / np.float32(255.0)
    return Dataset(np.ascontiguousarray(x), np.concatenate(labels), split, variant)


def cifar_split(root, variant: int = 10, split: str = "train") -> Dataset:
    if variant == 10:
        names = [f"data_batch_{i}.bin" for i in range(1, 6)] if split == "train" else ["test_batch.bin"]
    else:
        names = ["train.bin" if split == "train" else "test.bin"]
    return load_cifar([os.path.join(root, n) for n in names], variant, split)


def hflip(batch: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(batch[..., ::-1])


def random_hflip(batch: np.ndarray, prng: Prng, p: float = 0.5) -> np.ndarray:
    """Mirror each image left-right independently with probability ``p``."""
    coins = uniform_fill(prng, (len(batch),), dtype=np.float64) < p
    out = batch.copy()
    out[coins] = batch[coins][..., ::-1]
    return out
