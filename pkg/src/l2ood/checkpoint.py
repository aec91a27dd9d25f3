"""Binary checkpoint files.

Layout (all integers and reals little-endian)::

    b"NCL2"                         magic
    u32 format_version              currently 1
    u32 epoch
    u64 seed, u32 rng_stream
    u64 state_lo, u64 state_hi      PCG64 128-bit state
    u64 inc_lo,   u64 inc_hi        PCG64 128-bit increment
    u32 has_uint32, u32 uinteger
    f64 train_loss, f64 train_acc
    u32 n_encoder_layers
    n_encoder_layers x { u32 rows, u32 cols, f64[rows*cols] W, f64[cols] b }
    decision layer:   { u32 rows, u32 cols, u8 has_bias, f64[rows*cols] W, [f64[cols] b] }
    u64 checksum                    blake2b (8-byte digest) of every preceding byte
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .linalg import RngState
from .model import ModelParams
from .trainer import Checkpoint

MAGIC = b"NCL2"
FORMAT_VERSION = 1
_M64 = (1 << 64) - 1


def _checksum(payload: bytes) -> bytes:
    return hashlib.blake2b(payload, digest_size=8).digest()


def _arr(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def encode(ck: Checkpoint) -> bytes:
    r = ck.rng_state
    p = ck.params
    parts = [
        MAGIC,
        struct.pack("<II", FORMAT_VERSION, ck.epoch),
        struct.pack("<QI", r.seed, r.stream),
        struct.pack("<QQQQ", r.state & _M64, r.state >> 64, r.inc & _M64, r.inc >> 64),
        struct.pack("<II", r.has_uint32, r.uinteger),
        struct.pack("<dd", ck.train_loss, ck.train_acc),
        struct.pack("<I", len(p.enc_weights)),
    ]
    for w, b in zip(p.enc_weights, p.enc_biases):
        parts += [struct.pack("<II", *w.shape), _arr(w), _arr(b)]
    parts += [struct.pack("<IIB", *p.W.shape, p.b is not None), _arr(p.W)]
    if p.b is not None:
        parts.append(_arr(p.b))
    payload = b"".join(parts)
    return payload + _checksum(payload)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.buf):
            raise CheckpointError("truncated checkpoint")
        out = struct.unpack_from(fmt, self.buf, self.pos)
        self.pos += size
        return out

    def floats(self, shape) -> np.ndarray:
        count = int(np.prod(shape))
        size = 8 * count
        if self.pos + size > len(self.buf):
            raise CheckpointError("truncated checkpoint")
        a = np.frombuffer(self.buf, dtype="<f8", count=count, offset=self.pos)
        self.pos += size
        return a.astype(np.float64).reshape(shape)


def decode(data: bytes) -> Checkpoint:
    if len(data) < len(MAGIC) + 8 or data[:4] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    payload, digest = data[:-8], data[-8:]
    if _checksum(payload) != digest:
        raise CheckpointError("checkpoint checksum mismatch")
    rd = _Reader(payload)
    rd.pos = 4
    version, epoch = rd.take("<II")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    seed, stream = rd.take("<QI")
    s_lo, s_hi, i_lo, i_hi = rd.take("<QQQQ")
    has_u32, uinteger = rd.take("<II")
    loss, acc = rd.take("<dd")
    (n_layers,) = rd.take("<I")
    ws, bs = [], []
    for _ in range(n_layers):
        rows, cols = rd.take("<II")
        ws.append(rd.floats((rows, cols)))
        bs.append(rd.floats((cols,)))
    rows, cols, has_bias = rd.take("<IIB")
    W = rd.floats((rows, cols))
    b = rd.floats((cols,)) if has_bias else None
    if rd.pos != len(payload):
        raise CheckpointError("trailing bytes in checkpoint")
    rng = RngState(seed, stream, s_lo | (s_hi << 64), i_lo | (i_hi << 64), has_u32, uinteger)
    return Checkpoint(epoch, ModelParams(tuple(ws), tuple(bs), W, b), rng, loss, acc)


def save_checkpoint(path, ck: Checkpoint) -> None:
    Path(path).write_bytes(encode(ck))


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return decode(data)


def checkpoint_name(epoch: int) -> str:
    return f"epoch_{epoch:04d}.ckpt"


def load_checkpoint_dir(directory) -> list[Checkpoint]:
    """All epoch-stamped checkpoints in a directory, sorted by epoch."""
    paths = sorted(Path(directory).glob("epoch_*.ckpt"))
    if not paths:
        raise CheckpointError(f"no checkpoints in {directory}")
    return sorted((load_checkpoint(p) for p in paths), key=lambda c: c.epoch)
