"""Dense tensor kernels and the seedable random source.

Tensors are plain ``numpy.ndarray`` objects (row-major, float32 by default).
Every kernel here is pure; gradients are written by hand and exposed next to
their forward so the model code never needs an autodiff graph.
"""

from __future__ import annotations

import hashlib

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

Tensor = np.ndarray
DTYPE = np.float32


class DimensionError(ValueError):
    """Raised when tensor extents do not satisfy an operation's contract."""


def tensor(data, dtype=DTYPE, checked: bool = True) -> Tensor:
    """Build a contiguous tensor, rejecting NaN/Inf when ``checked``."""
    arr = np.ascontiguousarray(data, dtype=dtype)
    if checked and not np.all(np.isfinite(arr)):
        raise ValueError("tensor contains non-finite values")
    return arr


class Prng:
    """Counter-based random source (Philox-4x64).

    The 128-bit Philox key is ``seed`` in the low word and a 64-bit digest of
    the stream tags in the high word, so ``Prng(seed, "encode", epoch)`` and
    ``Prng(seed, "shuffle", epoch)`` never overlap and do not depend on the
    order in which they are created.
    """

    def __init__(self, seed: int, *stream):
        if not 0 <= int(seed) < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")
        self.seed = int(seed)
        self.stream = tuple(stream)
        key = self.seed | (_stream_word(self.stream) << 64)
        self._bitgen = np.random.Philox(key=key)
        self.generator = np.random.Generator(self._bitgen)

    def child(self, *tags) -> "Prng":
        return Prng(self.seed, *self.stream, *tags)

    @property
    def position(self) -> int:
        """Philox block counter (low word); advances as samples are drawn."""
        return int(self._bitgen.state["state"]["counter"][0])

    def __repr__(self):
        return f"Prng(seed={self.seed}, stream={self.stream!r})"


def _stream_word(tags) -> int:
    if not tags:
        return 0
    digest = hashlib.blake2b(repr(tags).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def uniform_fill(prng: Prng, shape, dtype=DTYPE) -> Tensor:
    """I.i.d. samples in [0, 1); advances ``prng``."""
    return prng.generator.random(shape, dtype=dtype)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return a @ b


def matmul_backward(a: Tensor, b: Tensor, grad_out: Tensor) -> tuple[Tensor, Tensor]:
    """Gradients of ``a @ b`` with respect to ``a`` and ``b``."""
    return grad_out @ b.T, a.T @ grad_out


def _as_batch(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise DimensionError(f"expected C×H×W or B×C×H×W, got shape {x.shape}")


def _im2col(x: Tensor) -> Tensor:
    # (B, C, H, W) -> (C*9, B*H*W) columns for a 3×3 / stride 1 / pad 1 window;
    # nine slice copies are much cheaper than one strided 6-D gather
    b, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1))).transpose(1, 0, 2, 3)
    cols = np.empty((c, 3, 3, b, h, w), x.dtype)
    for i in range(3):
        for j in range(3):
            cols[:, i, j] = xp[:, :, i:i + h, j:j + w]
    return cols.reshape(c * 9, b * h * w)


def conv2d(x: Tensor, kernels: Tensor) -> Tensor:
    """3×3 cross-correlation, stride 1, zero padding 1.

    ``x`` is C×H×W or B×C×H×W; ``kernels`` is O×C×3×3.
    """
    xb, squeeze = _as_batch(x)
    if kernels.ndim != 4 or kernels.shape[2:] != (3, 3):
        raise DimensionError(f"conv2d: kernels must be O×C×3×3, got {kernels.shape}")
    b, c, h, w = xb.shape
    o = kernels.shape[0]
    if kernels.shape[1] != c:
        raise DimensionError(f"conv2d: input has {c} channels, kernels expect {kernels.shape[1]}")
    out = kernels.reshape(o, c * 9) @ _im2col(xb)
    out = np.ascontiguousarray(out.reshape(o, b, h, w).transpose(1, 0, 2, 3))
    return out[0] if squeeze else out


def conv2d_backward(x: Tensor, kernels: Tensor, grad_out: Tensor,
                    need_input_grad: bool = True) -> tuple[Tensor | None, Tensor]:
    """Gradients of :func:`conv2d` with respect to its input and kernels."""
    xb, squeeze = _as_batch(x)
    gb, _ = _as_batch(grad_out)
    b, c, h, w = xb.shape
    o = kernels.shape[0]
    g2 = gb.transpose(1, 0, 2, 3).reshape(o, b * h * w)
    grad_k = (g2 @ _im2col(xb).T).reshape(o, c, 3, 3)
    grad_x = None
    if need_input_grad:
        flipped = np.ascontiguousarray(kernels.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
        grad_x = conv2d(gb, flipped)
        if squeeze:
            grad_x = grad_x[0]
    return grad_x, grad_k


def avgpool2d(x: Tensor) -> Tensor:
    """2×2 mean pooling with stride 2 over the last two axes."""
    h, w = x.shape[-2:]
    if h % 2 or w % 2:
        raise DimensionError(f"avgpool2d: spatial extent {h}×{w} is not even")
    # fixed left-to-right summation order so results are reproducible exactly
    total = x[..., 0::2, 0::2] + x[..., 0::2, 1::2] + x[..., 1::2, 0::2] + x[..., 1::2, 1::2]
    return total / x.dtype.type(4)


def avgpool2d_backward(grad_out: Tensor) -> Tensor:
    g = grad_out * grad_out.dtype.type(0.25)
    return np.repeat(np.repeat(g, 2, axis=-2), 2, axis=-1)
