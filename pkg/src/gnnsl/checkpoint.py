"""Named-tensor checkpoint container shared by the encoder and the GNN.

Layout (little-endian): 4-byte magic, u32 format version, u32 config length,
config as UTF-8 JSON, u32 tensor count, then per tensor: u16 name length,
name bytes, u32 rank, rank x u64 dims, float64 values.
"""

import hashlib
import io
import json
import struct

import numpy as np

FORMAT_VERSION = 1


class FormatError(ValueError):
    def __init__(self, message, offset=None):
        self.offset = offset
        super().__init__(f"{message} (at byte offset {offset})" if offset is not None else message)


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated while reading {what}", self.pos)
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt, what):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size, what))


def dump_tensors(magic, config, tensors):
    out = io.BytesIO()
    out.write(magic)
    cfg = json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")
    out.write(struct.pack("<II", FORMAT_VERSION, len(cfg)))
    out.write(cfg)
    out.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f8")
        nb = name.encode("utf-8")
        out.write(struct.pack("<H", len(nb)))
        out.write(nb)
        out.write(struct.pack("<I", arr.ndim))
        out.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        out.write(np.ascontiguousarray(arr).tobytes())
    return out.getvalue()


def load_tensors(buf, magic):
    r = _Reader(buf)
    got = r.take(4, "magic")
    if got != magic:
        raise FormatError(f"bad magic {got!r}, expected {magic!r}", 0)
    (version,) = r.unpack("<I", "version")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    (cfg_len,) = r.unpack("<I", "config length")
    start = r.pos
    try:
        config = json.loads(r.take(cfg_len, "config").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable config block: {exc}", start) from None
    (count,) = r.unpack("<I", "tensor count")
    tensors = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H", "name length")
        name = r.take(nlen, "tensor name").decode("utf-8")
        (rank,) = r.unpack("<I", "rank")
        dims = r.unpack(f"<{rank}Q", "dims")
        n = int(np.prod(dims, dtype=np.int64)) if rank else 1
        raw = r.take(8 * n, f"values of {name}")
        tensors[name] = np.frombuffer(raw, dtype="<f8").reshape(dims).astype(np.float64)
    if r.pos != len(buf):
        raise FormatError("trailing bytes after last tensor", r.pos)
    return config, tensors


def digest(buf):
    return hashlib.sha256(buf).digest()
