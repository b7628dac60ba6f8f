"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"T2D1"                      magic
    u32 version
    u32 n, n bytes               config text (``key = value`` lines, UTF-8)
    u32 count                    number of tensors
    count x:
        u32 n, n bytes           tensor name (UTF-8)
        u8  dtype code           1 float32, 2 float64, 3 int64
        u32 rank
        rank x u64               extents
        payload                  C-order, little-endian

Tensor names are namespaced: ``param/<name>``, ``adam.m/<name>``,
``adam.v/<name>``, ``adam.t/<name>``, ``norm/mean``, ``norm/std`` and
``periods/frozen`` (rows of freq, period, amplitude).

Loading at a different precision casts every floating tensor: float64 ->
float32 rounds to nearest, float32 -> float64 is exact. Forward outputs are
bit-identical only when loaded at the precision they were saved with.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import format_kv, model_config_from_kv, parse_kv
from .data import NormStats
from .model import ModelConfig, Times2D
from .params import ParamStore
from .spectral import PeriodEntry, PeriodSet
from .training import Adam, AdamState

MAGIC = b"T2D1"
VERSION = 1
_CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("<i8")}
_CODE_OF = {np.dtype(np.float32): 1, np.dtype(np.float64): 2, np.dtype(np.int64): 3}


class CorruptCheckpointError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


@dataclass
class Checkpoint:
    model_config: ModelConfig
    params: dict[str, np.ndarray]
    adam: AdamState = field(default_factory=AdamState)
    rng_state: dict | None = None
    norm: NormStats | None = None
    frozen: PeriodSet | None = None
    version: int = VERSION

    @property
    def step(self) -> int:
        return self.adam.step


def make_checkpoint(model: Times2D, optimizer: Adam | None = None, norm: NormStats | None = None) -> Checkpoint:
    return Checkpoint(
        model_config=model.config,
        params=model.params.state(),
        adam=optimizer.state if optimizer is not None else AdamState(),
        rng_state=model.rng.bit_generator.state,
        norm=norm,
        frozen=model.frozen,
    )


def _tensors(c: Checkpoint) -> dict[str, np.ndarray]:
    out = {f"param/{k}": v for k, v in c.params.items()}
    for k in c.adam.m:
        out[f"adam.m/{k}"] = c.adam.m[k]
        out[f"adam.v/{k}"] = c.adam.v[k]
        out[f"adam.t/{k}"] = np.asarray(c.adam.t[k], dtype=np.int64)
    if c.norm is not None:
        out["norm/mean"] = np.asarray(c.norm.mean, dtype=np.float64)
        out["norm/std"] = np.asarray(c.norm.std, dtype=np.float64)
    if c.frozen is not None:
        out["periods/frozen"] = np.array([[e.freq, e.period, e.amplitude] for e in c.frozen], dtype=np.float64)
    return out


def _config_text(c: Checkpoint) -> str:
    values = c.model_config.to_dict()
    values["step"] = c.adam.step
    text = format_kv(values)
    if c.rng_state is not None:
        text += f"rng_state = {json.dumps(c.rng_state, sort_keys=True)}\n"
    return text


def dumps(c: Checkpoint) -> bytes:
    parts = [MAGIC, struct.pack("<I", c.version)]
    text = _config_text(c).encode("utf-8")
    parts += [struct.pack("<I", len(text)), text]
    tensors = _tensors(c)
    parts.append(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if arr.dtype not in _CODE_OF:
            raise TypeError(f"tensor {name} has unsupported dtype {arr.dtype}")
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw_name)) + raw_name)
        parts.append(struct.pack("<BI", _CODE_OF[arr.dtype], arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=_CODES[_CODE_OF[arr.dtype]]).tobytes())
    return b"".join(parts)


def save_checkpoint(c: Checkpoint, path) -> None:
    Path(path).write_bytes(dumps(c))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise CorruptCheckpointError(f"truncated while reading {what}", self.pos)
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def loads(buf: bytes, precision: str | None = None) -> Checkpoint:
    r = _Reader(buf)
    if r.take(4, "magic") != MAGIC:
        raise CorruptCheckpointError("bad magic, not a T2D1 checkpoint", 0)
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise CorruptCheckpointError(f"unsupported checkpoint version {version}", 4)
    (n,) = r.unpack("<I", "config length")
    start = r.pos
    try:
        kv = parse_kv(r.take(n, "config text").decode("utf-8"), "checkpoint")
        cfg = model_config_from_kv(kv).validate()
    except (UnicodeDecodeError, ValueError) as exc:
        if isinstance(exc, CorruptCheckpointError):
            raise
        raise CorruptCheckpointError(f"invalid config block: {exc}", start) from None
    if precision is not None:
        cfg.precision = precision
        cfg.validate()
    float_dtype = cfg.dtype

    (count,) = r.unpack("<I", "tensor count")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        at = r.pos
        (ln,) = r.unpack("<I", "tensor name length")
        name = r.take(ln, "tensor name").decode("utf-8", errors="replace")
        code, rank = r.unpack("<BI", f"header of {name}")
        if code not in _CODES:
            raise CorruptCheckpointError(f"unknown dtype code {code} for {name}", at)
        shape = r.unpack(f"<{rank}Q", f"extents of {name}")
        dt = _CODES[code]
        size = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        arr = np.frombuffer(r.take(size, f"payload of {name}"), dtype=dt).reshape(shape)
        tensors[name] = arr.astype(dt.newbyteorder("="))
    if r.pos != len(buf):
        raise CorruptCheckpointError("trailing bytes after last tensor", r.pos)

    params, adam = {}, AdamState(step=int(kv.get("step", 0)))
    for name, arr in tensors.items():
        ns, _, key = name.partition("/")
        if ns == "param":
            params[key] = arr.astype(float_dtype)
        elif ns == "adam.m":
            adam.m[key] = arr.astype(float_dtype)
        elif ns == "adam.v":
            adam.v[key] = arr.astype(float_dtype)
        elif ns == "adam.t":
            adam.t[key] = int(arr)
    norm = None
    if "norm/mean" in tensors:
        norm = NormStats(tensors["norm/mean"], tensors["norm/std"])
    frozen = None
    if "periods/frozen" in tensors:
        rows = tensors["periods/frozen"]
        frozen = PeriodSet(tuple(PeriodEntry(int(f), int(p), float(a)) for f, p, a in rows), cfg.seq_len)
    rng_state = json.loads(kv["rng_state"]) if "rng_state" in kv else None
    ckpt = Checkpoint(cfg, params, adam, rng_state, norm, frozen, version)
    _validate_shapes(ckpt)
    return ckpt


def load_checkpoint(path, precision: str | None = None) -> Checkpoint:
    return loads(Path(path).read_bytes(), precision)


def _validate_shapes(c: Checkpoint) -> None:
    reference = Times2D(c.model_config).params
    for name, t in reference.items():
        if name not in c.params:
            raise CorruptCheckpointError(f"missing parameter {name}", -1)
        if c.params[name].shape != t.shape:
            raise CorruptCheckpointError(
                f"parameter {name} has shape {c.params[name].shape}, config implies {t.shape}", -1
            )
    for name, arr in c.adam.m.items():
        if name not in c.params or arr.shape != c.params[name].shape or c.adam.v[name].shape != arr.shape:
            raise CorruptCheckpointError(f"optimizer moment {name} does not match its parameter", -1)


def model_from_checkpoint(c: Checkpoint) -> Times2D:
    store = ParamStore(c.model_config.seed, c.model_config.dtype)
    store.load_state(c.params)
    model = Times2D(c.model_config, store)
    if c.rng_state is not None:
        model.rng.bit_generator.state = c.rng_state
    if c.frozen is not None:
        model.frozen = c.frozen
    return model
