"""Binary checkpoint container: named float32 tensors plus a config echo.

Layout (all little-endian):
    magic "LDVF" | u32 version | u32 n_config | n_config x (str key, str val)
    | u32 n_tensors | n_tensors x (str name, u32 ndim, u32 dims..., f32 data)
where str is u32 length followed by UTF-8 bytes. Round-trips are bitwise.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"LDVF"
VERSION = 1


class CheckpointError(Exception):
    """Bad magic, version, or truncated checkpoint data."""


def _pack_str(s):
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def save_checkpoint(path, tensors, config_echo):
    """Write name->array float32 records with a flat str->str config echo."""
    parts = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(config_echo))]
    for key in config_echo:
        parts.append(_pack_str(key))
        parts.append(_pack_str(config_echo[key]))
    parts.append(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        parts.append(_pack_str(name))
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, blob):
        self.blob = blob
        self.at = 0

    def take(self, n):
        if self.at + n > len(self.blob):
            raise CheckpointError("truncated checkpoint")
        out = self.blob[self.at:self.at + n]
        self.at += n
        return out

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def string(self):
        return self.take(self.u32()).decode("utf-8")


def load_checkpoint(path):
    """Read back (tensors, config_echo)."""
    p = Path(path)
    if not p.is_file():
        raise CheckpointError(f"checkpoint {p} does not exist")
    r = _Reader(p.read_bytes())
    if r.take(4) != MAGIC:
        raise CheckpointError(f"{p} is not a model checkpoint (bad magic)")
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}, expected {VERSION}")
    config_echo = {}
    for _ in range(r.u32()):
        key = r.string()
        config_echo[key] = r.string()
    tensors = {}
    for _ in range(r.u32()):
        name = r.string()
        ndim = r.u32()
        shape = struct.unpack(f"<{ndim}I", r.take(4 * ndim))
        count = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape)
        tensors[name] = data.copy()
    if r.at != len(r.blob):
        raise CheckpointError("trailing bytes after checkpoint payload")
    return tensors, config_echo
