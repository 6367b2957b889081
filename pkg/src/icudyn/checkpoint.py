"""Binary checkpoint container shared by the recurrent model and the baselines.

Layout (all integers unsigned 32-bit little-endian, floats IEEE-754 binary64
little-endian)::

    magic        8 bytes  b"ICUDYNCK"
    version      u32      FORMAT_VERSION
    model_type   u32      1 = rnn, 2 = lr, 3 = mlp
    n_layers     u32
    layers       n_layers x (input_dim u32, width u32)
    payload      float64 values, row-major, in the order given by ``layout``
    digest       32 bytes SHA-256 of everything above

rnn payload, per layer: W_i, W_f, W_o, W_g (width x input_dim), U_i, U_f,
U_o, U_g (width x width), b_i, b_f, b_o, b_g (width); then w_out (last
width) and b_out (1).  lr: a single (n_features, 1) layer holding w, b.
mlp: layers (n_features, hidden), (hidden, 1) holding W1, b1, w2, b2.

A text manifest ``<path>.manifest.txt`` repeats the header and digest.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CheckpointError, ShapeError

MAGIC = b"ICUDYNCK"
FORMAT_VERSION = 1
MODEL_TYPES = {"rnn": 1, "lr": 2, "mlp": 3}
_TYPE_NAMES = {v: k for k, v in MODEL_TYPES.items()}


def layout(model_type: str, layers: list[tuple[int, int]]) -> list[tuple[int, ...]]:
    """Shapes of the payload arrays, in file order."""
    shapes: list[tuple[int, ...]] = []
    if model_type == "rnn":
        for d, h in layers:
            shapes += [(h, d)] * 4 + [(h, h)] * 4 + [(h,)] * 4
        shapes += [(layers[-1][1],), (1,)]
    elif model_type == "lr":
        ((d, _),) = layers
        shapes += [(d,), (1,)]
    elif model_type == "mlp":
        (d, h), _ = layers
        shapes += [(h, d), (h,), (h,), (1,)]
    else:
        raise CheckpointError(f"unknown model type {model_type!r}")
    return shapes


@dataclass
class Checkpoint:
    model_type: str
    layers: list[tuple[int, int]]
    arrays: list[np.ndarray]

    def to_bytes(self) -> bytes:
        shapes = layout(self.model_type, self.layers)
        if [tuple(a.shape) for a in self.arrays] != shapes:
            raise ShapeError(f"{self.model_type} arrays do not match the declared layer shapes")
        parts = [MAGIC, struct.pack("<III", FORMAT_VERSION, MODEL_TYPES[self.model_type], len(self.layers))]
        parts += [struct.pack("<II", d, h) for d, h in self.layers]
        parts += [np.ascontiguousarray(a, dtype="<f8").tobytes() for a in self.arrays]
        body = b"".join(parts)
        return body + hashlib.sha256(body).digest()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Checkpoint":
        if len(data) < len(MAGIC) + 12 + 32 or data[: len(MAGIC)] != MAGIC:
            raise CheckpointError("not an icudyn checkpoint (bad magic or truncated header)")
        body, digest = data[:-32], data[-32:]
        version, type_code, n_layers = struct.unpack_from("<III", data, len(MAGIC))
        if version != FORMAT_VERSION:
            raise CheckpointError(f"checkpoint format version {version}, expected {FORMAT_VERSION}")
        if type_code not in _TYPE_NAMES:
            raise CheckpointError(f"unknown model type code {type_code}")
        model_type = _TYPE_NAMES[type_code]
        off = len(MAGIC) + 12
        if len(body) < off + 8 * n_layers:
            raise CheckpointError("truncated checkpoint: layer table incomplete")
        layers = [struct.unpack_from("<II", data, off + 8 * i) for i in range(n_layers)]
        off += 8 * n_layers
        shapes = layout(model_type, layers)
        n_values = sum(int(np.prod(s)) for s in shapes)
        if len(body) != off + 8 * n_values:
            raise CheckpointError(
                f"checkpoint payload has {len(body) - off} bytes, layer table implies {8 * n_values}"
            )
        if hashlib.sha256(body).digest() != digest:
            raise CheckpointError("checkpoint digest mismatch (corrupted file)")
        flat = np.frombuffer(body, dtype="<f8", count=n_values, offset=off).astype(np.float64)
        arrays, pos = [], 0
        for s in shapes:
            k = int(np.prod(s))
            arrays.append(flat[pos : pos + k].reshape(s).copy())
            pos += k
        return cls(model_type, [tuple(map(int, l)) for l in layers], arrays)


def manifest_path(path) -> Path:
    return Path(str(path) + ".manifest.txt")


def write_checkpoint(path, ckpt: Checkpoint) -> None:
    data = ckpt.to_bytes()
    Path(path).write_bytes(data)
    lines = [
        "format icudyn-checkpoint",
        f"version {FORMAT_VERSION}",
        f"model_type {ckpt.model_type}",
        f"n_layers {len(ckpt.layers)}",
    ]
    lines += [f"layer {i} input_dim {d} width {h}" for i, (d, h) in enumerate(ckpt.layers, 1)]
    lines += [f"sha256 {hashlib.sha256(data).hexdigest()}"]
    manifest_path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_checkpoint(path) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    return Checkpoint.from_bytes(data)


def peek_model_type(path) -> str:
    return read_checkpoint(path).model_type
