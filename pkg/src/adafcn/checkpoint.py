"""Binary checkpoint: b"AFCN", u32 version, model config JSON + its sha256, named f64 arrays.

All integers little-endian. Strings and the config blob are u32-length-prefixed
UTF-8; each array is name, u32 ndim, u64 dims, then row-major f64 data.
"""
from __future__ import annotations

import dataclasses
import json
import struct
from pathlib import Path

import numpy as np

from .config import ModelConfig

MAGIC = b"AFCN"
VERSION = 1


class CheckpointError(Exception):
    pass


def _put_bytes(out: list, blob: bytes) -> None:
    out.append(struct.pack("<I", len(blob)))
    out.append(blob)


def save_checkpoint(path, state: dict[str, np.ndarray], model_cfg: ModelConfig) -> None:
    cfg_blob = json.dumps(dataclasses.asdict(model_cfg), sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<I", VERSION)]
    _put_bytes(parts, cfg_blob)
    _put_bytes(parts, model_cfg.digest().encode())
    parts.append(struct.pack("<I", len(state)))
    for name in sorted(state):
        arr = np.asarray(state[name], dtype="<f8", order="C")  # keeps 0-d arrays 0-d
        _put_bytes(parts, name.encode())
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError("truncated checkpoint")
        chunk = self.blob[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def bytes_(self) -> bytes:
        return self.take(self.u32())


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], ModelConfig]:
    """Return ``(state, model_config)``; raises CheckpointError on a bad file or hash."""
    try:
        r = _Reader(Path(path).read_bytes())
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    if r.take(4) != MAGIC:
        raise CheckpointError(f"{path} is not an AFCN checkpoint")
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        cfg = ModelConfig(**json.loads(r.bytes_().decode()))
    except (ValueError, TypeError) as exc:
        raise CheckpointError(f"corrupt config block in {path}: {exc}") from None
    digest = r.bytes_().decode()
    if digest != cfg.digest():
        raise CheckpointError("checkpoint config hash mismatch")
    state = {}
    for _ in range(r.u32()):
        name = r.bytes_().decode()
        ndim = r.u32()
        shape = struct.unpack(f"<{ndim}Q", r.take(8 * ndim))
        count = int(np.prod(shape)) if ndim else 1
        state[name] = np.frombuffer(r.take(8 * count), dtype="<f8").reshape(shape).astype(np.float64)
    return state, cfg

