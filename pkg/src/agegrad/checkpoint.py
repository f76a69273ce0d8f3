"""Binary checkpoint format with bit-exact parameter round-trips.

Layout (all integers little-endian):

    magic  b"AGEC" | version u32
    spec   u32 length + UTF-8 JSON of the ModelSpec (sorted keys)
    best   f64 best validation MAE (NaN when never evaluated)
    count  u32 number of parameters, then per parameter:
           u16 name length + UTF-8 name, u8 ndim, ndim x u32 dims,
           raw float32 little-endian values
    optim  u8 flag; when set: u64 step, f64 beta1/beta2/eps/weight_decay,
           u32 count + names of decay-excluded parameters, then first and
           second moments per parameter in file order (float32, same shapes)

Files are written atomically (temp file + rename).
"""

from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .errors import CheckpointError, ShapeError
from .model import ModelSpec, ParamStore, parameter_shapes
from .optim import OptimState
from .tensor import Tensor

MAGIC = b"AGEC"
VERSION = 1


@dataclass
class Checkpoint:
    spec: ModelSpec
    params: ParamStore
    best_val_mae: float
    optim_state: Optional[OptimState] = None


def _spec_json(spec: ModelSpec) -> bytes:
    return json.dumps(asdict(spec), sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_checkpoint(
    path: str,
    spec: ModelSpec,
    params: ParamStore,
    best_val_mae: float = math.nan,
    optim_state: Optional[OptimState] = None,
) -> None:
    chunks = [MAGIC, struct.pack("<I", VERSION)]
    blob = _spec_json(spec)
    chunks.append(struct.pack("<I", len(blob)))
    chunks.append(blob)
    chunks.append(struct.pack("<d", best_val_mae))
    chunks.append(struct.pack("<I", len(params)))
    for name, tensor in params.entries.items():
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", tensor.ndim))
        chunks.append(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
        chunks.append(np.ascontiguousarray(tensor.data, dtype="<f4").tobytes())
    if optim_state is None:
        chunks.append(struct.pack("<B", 0))
    else:
        chunks.append(struct.pack("<B", 1))
        chunks.append(
            struct.pack(
                "<Qdddd",
                optim_state.step,
                optim_state.beta1,
                optim_state.beta2,
                optim_state.eps,
                optim_state.weight_decay,
            )
        )
        excluded = sorted(optim_state.decay_exclude)
        chunks.append(struct.pack("<I", len(excluded)))
        for name in excluded:
            encoded = name.encode("utf-8")
            chunks.append(struct.pack("<H", len(encoded)))
            chunks.append(encoded)
        for name in params.entries:
            chunks.append(np.ascontiguousarray(optim_state.m[name], dtype="<f4").tobytes())
            chunks.append(np.ascontiguousarray(optim_state.v[name], dtype="<f4").tobytes())
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(b"".join(chunks))
    os.replace(tmp, path)


class _Reader:
    def __init__(self, buf: bytes, path: str):
        self.buf = buf
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"truncated checkpoint {self.path}")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def name(self) -> str:
        (n,) = self.unpack("<H")
        return self.take(n).decode("utf-8")

    def done(self) -> bool:
        return self.pos == len(self.buf)


def load_checkpoint(path: str) -> Checkpoint:
    """Parse and validate a checkpoint; never returns a partial model."""
    if not os.path.isfile(path):
        raise CheckpointError(f"checkpoint file not found: {path}")
    with open(path, "rb") as fh:
        reader = _Reader(fh.read(), path)
    if reader.take(4) != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
    (version,) = reader.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"{path} has checkpoint version {version}, expected {VERSION}")
    (spec_len,) = reader.unpack("<I")
    try:
        spec = ModelSpec(**json.loads(reader.take(spec_len).decode("utf-8")))
    except (ValueError, TypeError) as exc:
        raise CheckpointError(f"{path} has an unreadable model spec: {exc}") from None
    (best_val_mae,) = reader.unpack("<d")
    (count,) = reader.unpack("<I")
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        name = reader.name()
        (ndim,) = reader.unpack("<B")
        shape = reader.unpack(f"<{ndim}I")
        size = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        data = np.frombuffer(reader.take(4 * size), dtype="<f4").reshape(shape)
        arrays[name] = data.astype(np.float32)
    (has_optim,) = reader.unpack("<B")
    optim_state = None
    if has_optim:
        step, b1, b2, eps, wd = reader.unpack("<Qdddd")
        (n_excl,) = reader.unpack("<I")
        exclude = frozenset(reader.name() for _ in range(n_excl))
        m: dict[str, np.ndarray] = {}
        v: dict[str, np.ndarray] = {}
        for name, arr in arrays.items():
            m[name] = np.frombuffer(reader.take(4 * arr.size), dtype="<f4").reshape(arr.shape).astype(np.float32)
            v[name] = np.frombuffer(reader.take(4 * arr.size), dtype="<f4").reshape(arr.shape).astype(np.float32)
        optim_state = OptimState(
            beta1=b1, beta2=b2, eps=eps, weight_decay=wd, step=step, m=m, v=v, decay_exclude=exclude
        )
    if not reader.done():
        raise CheckpointError(f"{path} has {len(reader.buf) - reader.pos} bytes of trailing data")

    expected = parameter_shapes(spec)
    if list(expected) != list(arrays):
        raise CheckpointError(f"{path} parameter names do not match its model spec")
    params = ParamStore()
    for name, arr in arrays.items():
        if arr.shape != expected[name]:
            raise ShapeError(
                f"checkpoint parameter {name} has shape {arr.shape}, spec expects {expected[name]}"
            )
        params.add(name, Tensor(arr, requires_grad=True))
    return Checkpoint(spec, params, best_val_mae, optim_state)


def load_into(path: str, spec: ModelSpec) -> Checkpoint:
    """Load a checkpoint that must match an externally configured spec."""
    ckpt = load_checkpoint(path)
    if asdict(ckpt.spec) != asdict(spec):
        raise CheckpointError(
            f"checkpoint {path} was built for a different model spec "
            f"({ckpt.spec.variant}, dims {ckpt.spec.stage_dims}) than configured"
        )
    return ckpt
