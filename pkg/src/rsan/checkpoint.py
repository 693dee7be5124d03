"""Versioned binary checkpoints.

Layout (little-endian)::

    8s   magic "RSANCKPT"
    u32  format version
    u32  number of arrays
    per array: u16 name length, name (utf-8), u8 ndim, u32 dims[ndim],
               f64 payload (row-major)
    u32  config length, config echo (utf-8 JSON)
    u32  rng-state length, rng state (utf-8 JSON)
"""

from __future__ import annotations

import dataclasses
import io
import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .model import Flags, RSANModel

MAGIC = b"RSANCKPT"
VERSION = 1


def _arrays(model: RSANModel):
    out = dict(model.params)
    if model.W_init is not None:
        out["W_init"] = model.W_init
    return out


def checkpoint_bytes(model: RSANModel, config: dict, rng_state: dict | None = None) -> bytes:
    buf = io.BytesIO()
    arrays = _arrays(model)
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(arrays)))
    for name in sorted(arrays):
        a = np.asarray(arrays[name])
        raw = name.encode()
        buf.write(struct.pack("<H", len(raw)) + raw)
        buf.write(struct.pack("<B", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape))
        buf.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    cfg = dict(config)
    cfg["flags"] = dataclasses.asdict(model.flags)
    for blob in (json.dumps(cfg, sort_keys=True), json.dumps(rng_state, sort_keys=True)):
        raw = blob.encode()
        buf.write(struct.pack("<I", len(raw)) + raw)
    return buf.getvalue()


def save_checkpoint(path, model: RSANModel, config: dict, rng_state: dict | None = None):
    Path(path).write_bytes(checkpoint_bytes(model, config, rng_state))


def load_checkpoint(path):
    """Returns ``(model, config echo, rng state)``."""
    data = Path(path).read_bytes()
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(data):
            raise FormatError(f"truncated checkpoint while reading {what}", offset=pos)
        out = data[pos:pos + n]
        pos += n
        return out

    magic = data[:8]
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", offset=0, expected=MAGIC.decode())
    pos = 8
    version, n = struct.unpack("<II", take(8, "header"))
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", offset=8, expected=str(VERSION))
    arrays = {}
    for _ in range(n):
        (ln,) = struct.unpack("<H", take(2, "name length"))
        name = take(ln, "name").decode()
        (ndim,) = struct.unpack("<B", take(1, "ndim"))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim, "shape"))
        count = int(np.prod(shape, dtype=np.int64))
        arrays[name] = np.frombuffer(take(8 * count, f"array {name}"), dtype="<f8").reshape(shape).astype(np.float64)
    blobs = []
    for what in ("config", "rng state"):
        (ln,) = struct.unpack("<I", take(4, f"{what} length"))
        at = pos
        try:
            blobs.append(json.loads(take(ln, what).decode()))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"unreadable {what} ({exc})", offset=at) from None
    if pos != len(data):
        raise FormatError("trailing bytes after checkpoint payload", offset=pos)
    config, rng_state = blobs
    flags = Flags(**config.get("flags", {}))
    W_init = arrays.pop("W_init", None)
    return RSANModel(arrays, flags, W_init), config, rng_state
