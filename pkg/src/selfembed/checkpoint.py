"""Binary checkpoint files.

Layout (all little-endian)::

    b"PSE1"                      magic
    u32                          format version
    u32 + utf-8 JSON             {"config": ..., "epoch": ..., "adam": {...}}
    u32 count, records           model parameters
    u32 count, records           Adam moments ("m/<name>", "v/<name>") and "adam.step"
    u64 seed, u64 next epoch     RNG state (16 bytes)

A record is ``u32 name length, name, u32 rank, rank * u32 extents`` followed
by the float32 values in C order.
"""

import json
import struct

import numpy as np

from . import autodiff as ad
from .config import TrainConfig
from .training import Checkpoint

MAGIC = b"PSE1"
VERSION = 1


class CheckpointError(ValueError):
    """Malformed or incompatible checkpoint file."""


def _write_records(fh, records):
    fh.write(struct.pack("<I", len(records)))
    for name, arr in records:
        arr = np.ascontiguousarray(arr, dtype="<f4")
        raw = name.encode("utf-8")
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise CheckpointError("truncated checkpoint")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def records(self):
        out = {}
        for _ in range(self.u32()):
            name = self.take(self.u32()).decode("utf-8")
            rank = self.u32()
            shape = struct.unpack(f"<{rank}I", self.take(4 * rank)) if rank else ()
            count = int(np.prod(shape)) if rank else 1
            out[name] = np.frombuffer(self.take(4 * count), dtype="<f4").reshape(shape).astype(np.float32)
        return out


def save_checkpoint(path, ckpt):
    names = sorted(ckpt.params)
    header = {
        "config": ckpt.config.to_dict(),
        "epoch": ckpt.epoch,
        "adam": {"beta1": ckpt.adam.beta1, "beta2": ckpt.adam.beta2, "eps": ckpt.adam.eps},
    }
    params = [(n, ckpt.params[n].data) for n in names]
    adam = [(f"m/{n}", m) for n, m in zip(names, ckpt.adam.m)]
    adam += [(f"v/{n}", v) for n, v in zip(names, ckpt.adam.v)]
    adam.append(("adam.step", np.asarray(ckpt.adam.step, dtype=np.float32)))
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        text = json.dumps(header, sort_keys=True).encode("utf-8")
        fh.write(struct.pack("<I", len(text)))
        fh.write(text)
        _write_records(fh, params)
        _write_records(fh, adam)
        fh.write(struct.pack("<QQ", ckpt.config.seed & 0xFFFFFFFFFFFFFFFF, ckpt.epoch))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        rd = _Reader(fh.read())
    if rd.take(4) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version = rd.u32()
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    header = json.loads(rd.take(rd.u32()).decode("utf-8"))
    config = TrainConfig.from_dict(header["config"])
    params = {n: ad.Tensor(a, requires_grad=True) for n, a in rd.records().items()}
    adam_rec = rd.records()
    _seed, next_epoch = struct.unpack("<QQ", rd.take(16))
    names = sorted(params)
    a = header["adam"]
    adam = ad.AdamState([params[n] for n in names], a["beta1"], a["beta2"], a["eps"])
    try:
        adam.m = [adam_rec[f"m/{n}"].copy() for n in names]
        adam.v = [adam_rec[f"v/{n}"].copy() for n in names]
        adam.step = int(adam_rec["adam.step"].item())
    except KeyError as exc:
        raise CheckpointError(f"{path}: missing optimizer record {exc}") from None
    return Checkpoint(config=config, params=params, adam=adam, epoch=int(next_epoch))
