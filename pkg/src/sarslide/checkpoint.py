"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"SSLD" | u16 version | u32 n | n bytes JSON model description
    | float32 parameter blobs in layer order (w, b per parametric layer)
    | u8 has_optimizer
    [ | u32 n | n bytes JSON Adam hyperparameters | m blobs | v blobs ]
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .nn.adam import AdamState
from .nn.model import Model

MAGIC = b"SSLD"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _blob(a) -> bytes:
    return np.ascontiguousarray(a, dtype="<f4").tobytes()


def _json_block(obj) -> bytes:
    raw = json.dumps(obj, sort_keys=True).encode()
    return struct.pack("<I", len(raw)) + raw


def save_checkpoint(model: Model, path, state: AdamState | None = None) -> None:
    """Write ``model`` and, when given (or attached as ``model.optimizer``), its Adam state."""
    state = state if state is not None else model.optimizer
    desc = model.describe()
    desc["param_shapes"] = [list(s) for s in model.param_shapes()]
    desc["meta"] = model.meta
    parts = [MAGIC, struct.pack("<H", VERSION), _json_block(desc)]
    parts += [_blob(p) for p in model.parameters()]
    if state is None or not state.m:
        parts.append(b"\x00")
    else:
        parts += [b"\x01", _json_block(state.hyperparameters())]
        parts += [_blob(m) for m in state.m] + [_blob(v) for v in state.v]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, raw: bytes):
        self.raw, self.pos = raw, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise CheckpointError("checkpoint truncated")
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def json(self):
        (n,) = struct.unpack("<I", self.take(4))
        try:
            return json.loads(self.take(n))
        except json.JSONDecodeError as e:
            raise CheckpointError(f"corrupt JSON block: {e}") from e

    def arrays(self, shapes):
        return [np.frombuffer(self.take(4 * int(np.prod(s))), dtype="<f4").astype(np.float32).reshape(s)
                for s in shapes]


def load_checkpoint(path) -> Model:
    """Read a checkpoint; the Adam state, if stored, is attached as ``model.optimizer``."""
    r = _Reader(Path(path).read_bytes())
    if r.take(4) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic bytes)")
    (version,) = struct.unpack("<H", r.take(2))
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    desc = r.json()
    try:
        model = Model(desc["layers"], desc["input_shape"], desc["seed"], init=False)
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"{path}: invalid model description ({e})") from e
    shapes = model.param_shapes()
    if [tuple(s) for s in desc.get("param_shapes", [])] != shapes:
        raise CheckpointError(f"{path}: stored parameter shapes do not match the layer stack")
    model.set_parameters(r.arrays(shapes))
    model.meta = desc.get("meta") or {}
    flag = r.take(1)
    if flag == b"\x01":
        hyper = r.json()
        m = r.arrays(shapes)
        v = r.arrays(shapes)
        model.optimizer = AdamState(hyper["lr"], hyper["beta1"], hyper["beta2"], hyper["eps"],
                                    int(hyper["t"]), m, v)
    elif flag != b"\x00":
        raise CheckpointError(f"{path}: bad optimizer flag")
    if r.pos != len(r.raw):
        raise CheckpointError(f"{path}: {len(r.raw) - r.pos} trailing bytes")
    return model
