"""Binary checkpoint format.

Layout (all integers and floats little-endian)::

    b"SHORTCUT1"                 magic, 9 bytes
    u32 version                  currently 1
    u32 n, bytes[n]              RunConfig as key=value text (utf-8)
    u64 training step
    u64 adam step
    f64 x 6                      lr, beta1, beta2, eps, weight_decay, ema_ratio
    u32 n_sections
      per section:  u16 n, name ; u32 n_tensors
        per tensor: u16 n, name ; u8 ndim ; u32 x ndim dims ; f32 x prod(dims)
    u32 crc32 of every preceding byte

Sections are ``params``, ``ema``, ``adam.m`` and ``adam.v``.
"""
from __future__ import annotations

import os
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import RunConfig
from .errors import CorruptionError
from .optim import AdamWState, EmaState, TrainState

MAGIC = b"SHORTCUT1"
VERSION = 1
SECTIONS = ("params", "ema", "adam.m", "adam.v")


@dataclass
class Checkpoint:
    config: RunConfig
    state: TrainState


def _pack_str(s: str, fmt: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack(fmt, len(b)) + b


def _pack_tensors(name: str, tensors: dict[str, np.ndarray]) -> bytes:
    out = [_pack_str(name, "<H"), struct.pack("<I", len(tensors))]
    for key, arr in tensors.items():
        arr = np.asarray(arr)
        out.append(_pack_str(key, "<H"))
        out.append(struct.pack("<B", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(out)


def encode(config: RunConfig, state: TrainState) -> bytes:
    opt = state.opt
    body = b"".join([
        MAGIC,
        struct.pack("<I", VERSION),
        _pack_str(config.to_text(), "<I"),
        struct.pack("<QQ", state.step, opt.step),
        struct.pack("<6d", opt.lr, opt.beta1, opt.beta2, opt.eps, opt.weight_decay,
                    state.ema.ema_ratio),
        struct.pack("<I", len(SECTIONS)),
        _pack_tensors("params", state.params),
        _pack_tensors("ema", state.ema.shadow),
        _pack_tensors("adam.m", opt.m),
        _pack_tensors("adam.v", opt.v),
    ])
    return body + struct.pack("<I", zlib.crc32(body))


def save_checkpoint(config: RunConfig, state: TrainState, path) -> None:
    """Write atomically: a temp file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode(config, state))
    os.replace(tmp, path)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise CorruptionError(f"truncated checkpoint while reading {what}", self.pos)
        b = self.buf[self.pos:self.pos + n]
        self.pos += n
        return b

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def string(self, fmt: str, what: str) -> str:
        (n,) = self.unpack(fmt, what + " length")
        start = self.pos
        try:
            return self.take(n, what).decode("utf-8")
        except UnicodeDecodeError:
            raise CorruptionError(f"invalid utf-8 in {what}", start) from None


def decode(buf: bytes) -> Checkpoint:
    r = _Reader(buf)
    if r.take(len(MAGIC), "magic") != MAGIC:
        raise CorruptionError("bad magic; not a shortcut checkpoint", 0)
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise CorruptionError(f"unsupported checkpoint version {version}", len(MAGIC))
    if len(buf) < r.pos + 4:
        raise CorruptionError("truncated checkpoint", len(buf))
    (stored_crc,) = struct.unpack("<I", buf[-4:])
    body = buf[:-4]
    config_text = r.string("<I", "config")
    step, adam_step = r.unpack("<QQ", "step counters")
    lr, b1, b2, eps, wd, ema_ratio = r.unpack("<6d", "optimizer scalars")
    (n_sections,) = r.unpack("<I", "section count")
    sections: dict[str, dict[str, np.ndarray]] = {}
    for _ in range(n_sections):
        sec = r.string("<H", "section name")
        (n_t,) = r.unpack("<I", "tensor count")
        tensors = {}
        for _ in range(n_t):
            key = r.string("<H", "tensor name")
            (ndim,) = r.unpack("<B", "ndim")
            shape = r.unpack(f"<{ndim}I", "shape")
            count = int(np.prod(shape)) if ndim else 1
            raw = r.take(4 * count, f"tensor {sec}/{key}")
            tensors[key] = np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(shape)
        sections[sec] = tensors
    if r.pos != len(body):
        raise CorruptionError("unexpected bytes after tensor data", r.pos)
    if zlib.crc32(body) != stored_crc:
        raise CorruptionError("checksum mismatch", len(body))
    missing = [s for s in SECTIONS if s not in sections]
    if missing:
        raise CorruptionError(f"missing sections {missing}", r.pos)
    config = RunConfig.from_text(config_text)
    opt = AdamWState(sections["adam.m"], sections["adam.v"], adam_step, lr, b1, b2, eps, wd)
    state = TrainState(sections["params"], opt, EmaState(sections["ema"], ema_ratio), step)
    return Checkpoint(config, state)


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return decode(path.read_bytes())
