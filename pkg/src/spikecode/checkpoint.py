"""Binary checkpoint container.

Layout (all integers little-endian)::

    8 bytes   magic b"SNNCMP01" (last two bytes are the format version)
    u64       length of the UTF-8 JSON config echo, then the echo itself
    records until EOF, each:
        u32   name length, then UTF-8 name
        u32   rank
        u64   extent, repeated rank times
        f32   data, row-major

Parameters are stored as ``param/<name>``, Adam moments as ``adam_m/<name>``
and ``adam_v/<name>``, and scalars (``meta/epoch``, ``meta/adam_step``,
``meta/rng_epoch``) as rank-0 tensors.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"SNNCMP01"


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: dict
    params: dict
    adam_m: dict
    adam_v: dict
    adam_step: int
    epoch: int  # number of completed epochs

    @property
    def rng_epoch(self) -> int:
        # every random stream is keyed by (seed, purpose, epoch, batch), so the
        # next epoch index is the whole generator position
        return self.epoch


def _record(name: str, arr: np.ndarray) -> bytes:
    arr = np.asarray(arr, dtype="<f4")  # tobytes() below is C order; ascontiguousarray would promote rank 0
    raw = name.encode()
    out = [struct.pack("<I", len(raw)), raw, struct.pack("<I", arr.ndim)]
    out += [struct.pack("<Q", n) for n in arr.shape]
    out.append(arr.tobytes())
    return b"".join(out)


def to_bytes(ckpt: Checkpoint) -> bytes:
    echo = json.dumps(ckpt.config, sort_keys=True, separators=(",", ":")).encode()
    parts = [MAGIC, struct.pack("<Q", len(echo)), echo]
    for name, p in ckpt.params.items():
        parts.append(_record(f"param/{name}", p))
    for name, m in ckpt.adam_m.items():
        parts.append(_record(f"adam_m/{name}", m))
    for name, v in ckpt.adam_v.items():
        parts.append(_record(f"adam_v/{name}", v))
    parts.append(_record("meta/epoch", np.float32(ckpt.epoch)))
    parts.append(_record("meta/adam_step", np.float32(ckpt.adam_step)))
    parts.append(_record("meta/rng_epoch", np.float32(ckpt.rng_epoch)))
    return b"".join(parts)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    if ckpt.adam_step >= 2**24 or ckpt.epoch >= 2**24:
        raise CheckpointError("counters too large for exact float32 storage")
    data = to_bytes(ckpt)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def from_bytes(data: bytes, source="<bytes>") -> Checkpoint:
    if len(data) < 8 or data[:6] != MAGIC[:6]:
        raise CheckpointError(f"{source}: not a checkpoint (bad magic)")
    if data[:8] != MAGIC:
        raise CheckpointError(f"{source}: unsupported checkpoint version {data[6:8]!r}")
    pos = 8

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise CheckpointError(f"{source}: truncated at offset {pos}")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    (n_echo,) = struct.unpack("<Q", take(8))
    try:
        config = json.loads(take(n_echo).decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{source}: corrupt config echo ({exc})") from None
    tensors = {}
    while pos < len(data):
        (n_name,) = struct.unpack("<I", take(4))
        name = take(n_name).decode()
        (rank,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{rank}Q", take(8 * rank))
        count = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(take(4 * count), dtype="<f4").reshape(shape).astype(np.float32)
        tensors[name] = arr
    groups = {"param": {}, "adam_m": {}, "adam_v": {}, "meta": {}}
    for name, arr in tensors.items():
        kind, _, key = name.partition("/")
        if kind not in groups:
            raise CheckpointError(f"{source}: unknown record {name!r}")
        groups[kind][key] = arr
    try:
        meta = groups["meta"]
        return Checkpoint(config, groups["param"], groups["adam_m"], groups["adam_v"],
                          int(meta["adam_step"]), int(meta["epoch"]))
    except KeyError as exc:
        raise CheckpointError(f"{source}: missing record meta/{exc.args[0]}") from None


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return from_bytes(fh.read(), str(path))
