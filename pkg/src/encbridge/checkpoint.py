"""Binary checkpoint format.

Layout, all integers little-endian::

    b"ENCBCKPT"                 magic
    u32 version
    u32 meta_len, meta          UTF-8 JSON: model config, vocab, step, loss history, ...
    u32 n_records
    n_records x record:
        u16 name_len, name      UTF-8
        u8  ndim, u32 dims[ndim]
        u64 offset              byte offset into the payload
        u64 nbytes
        u32 crc32               of the record's payload bytes
    payload                     float32 little-endian scalars

Optimizer moments are stored as records named ``adam.m/<param>`` and
``adam.v/<param>``.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Vocab
from .model import BridgeWeights, ModelConfig, Seq2Seq
from .tensor import Tensor

MAGIC = b"ENCBCKPT"
VERSION = 1
SCALAR = np.dtype("<f4")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    model_config: dict
    vocab: list[str]
    params: dict[str, np.ndarray]
    opt_m: dict[str, np.ndarray] = field(default_factory=dict)
    opt_v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    loss_history: list[float] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_model(cls, model: Seq2Seq, vocab: Vocab, step: int = 0, loss_history=(),
                   opt_state=None, meta: dict | None = None) -> Checkpoint:
        params = {k: v.data.copy() for k, v in model.parameters().items()}
        m = {k: a.copy() for k, a in opt_state.m.items()} if opt_state else {}
        v = {k: a.copy() for k, a in opt_state.v.items()} if opt_state else {}
        return cls(model.config.to_dict(), vocab.tokens(), params, m, v, step,
                   [float(x) for x in loss_history], dict(meta or {}))

    @property
    def config(self) -> ModelConfig:
        return ModelConfig.from_dict(self.model_config)

    @property
    def has_bridge(self) -> bool:
        return any(k.startswith("bridge.") for k in self.params)

    def bridge_arrays(self) -> list[np.ndarray]:
        cfg = self.config
        return [self.params[f"bridge.{i}.weight"] for i in range(cfg.n_dec_layers)
                if f"bridge.{i}.weight" in self.params]

    def get_vocab(self) -> Vocab:
        return Vocab(self.vocab)

    def to_model(self, dtype=np.float32) -> Seq2Seq:
        cfg = self.config
        body = {k: Tensor(v.astype(dtype), requires_grad=True)
                for k, v in self.params.items() if not k.startswith("bridge.")}
        model = Seq2Seq(cfg, body)
        if self.has_bridge:
            model.attach_bridge(BridgeWeights([Tensor(w.astype(dtype), requires_grad=True)
                                               for w in self.bridge_arrays()]))
        else:
            model.detach_bridge()
        return model


def _records(ckpt: Checkpoint):
    yield from ckpt.params.items()
    for k, a in ckpt.opt_m.items():
        yield f"adam.m/{k}", a
    for k, a in ckpt.opt_v.items():
        yield f"adam.v/{k}", a


def to_bytes(ckpt: Checkpoint) -> bytes:
    meta = {"model_config": ckpt.model_config, "vocab": ckpt.vocab, "step": ckpt.step,
            "loss_history": ckpt.loss_history, "meta": ckpt.meta}
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    header = [MAGIC, struct.pack("<II", VERSION, len(meta_bytes)), meta_bytes]
    payload = []
    offset = 0
    records = list(_records(ckpt))
    header.append(struct.pack("<I", len(records)))
    for name, arr in records:
        data = np.ascontiguousarray(arr, dtype=SCALAR).tobytes()
        nb = name.encode("utf-8")
        header.append(struct.pack("<H", len(nb)) + nb)
        header.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        header.append(struct.pack("<QQI", offset, len(data), zlib.crc32(data)))
        payload.append(data)
        offset += len(data)
    return b"".join(header + payload)


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(to_bytes(ckpt))
    return path


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.buf):
            raise CheckpointError("truncated checkpoint header")
        out = struct.unpack_from(fmt, self.buf, self.pos)
        self.pos += size
        return out

    def raw(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError("truncated checkpoint header")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out


def from_bytes(buf: bytes) -> Checkpoint:
    r = _Reader(buf)
    if r.raw(len(MAGIC)) != MAGIC:
        raise CheckpointError("not an encbridge checkpoint (bad magic)")
    version, meta_len = r.take("<II")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        meta = json.loads(r.raw(meta_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint metadata: {exc}") from None
    (n_records,) = r.take("<I")
    entries = []
    for _ in range(n_records):
        (name_len,) = r.take("<H")
        name = r.raw(name_len).decode("utf-8", errors="replace")
        (ndim,) = r.take("<B")
        shape = r.take(f"<{ndim}I")
        offset, nbytes, crc = r.take("<QQI")
        entries.append((name, shape, offset, nbytes, crc))
    base = r.pos
    params, m, v = {}, {}, {}
    for name, shape, offset, nbytes, crc in entries:
        expected = int(np.prod(shape, dtype=np.int64)) * SCALAR.itemsize
        if nbytes != expected:
            raise CheckpointError(f"record {name!r}: {nbytes} bytes for shape {tuple(shape)}")
        start = base + offset
        data = buf[start:start + nbytes]
        if len(data) != nbytes:
            raise CheckpointError(f"record {name!r}: payload truncated")
        if zlib.crc32(data) != crc:
            raise CheckpointError(f"record {name!r}: payload checksum mismatch")
        arr = np.frombuffer(data, dtype=SCALAR).reshape(shape).astype(np.float32)
        if name.startswith("adam.m/"):
            m[name[7:]] = arr
        elif name.startswith("adam.v/"):
            v[name[7:]] = arr
        else:
            params[name] = arr
    return Checkpoint(meta["model_config"], meta["vocab"], params, m, v, meta["step"],
                      meta["loss_history"], meta.get("meta", {}))


def load_checkpoint(path) -> Checkpoint:
    return from_bytes(Path(path).read_bytes())


def payload_bytes(path) -> bytes:
    """The raw scalar payload of a checkpoint file (everything after the header)."""
    buf = Path(path).read_bytes()
    r = _Reader(buf)
    r.raw(len(MAGIC))
    _, meta_len = r.take("<II")
    r.raw(meta_len)
    (n,) = r.take("<I")
    for _ in range(n):
        (k,) = r.take("<H")
        r.raw(k)
        (ndim,) = r.take("<B")
        r.take(f"<{ndim}I")
        r.take("<QQI")
    return buf[r.pos:]
