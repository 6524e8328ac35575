"""Binary weight files.

Layout (all integers little-endian)::

    b"CVL1"
    u32 format version
    u32 num_classes
    u32 tensor count
    per tensor:
        u16 name length, UTF-8 name
        u8  rank, u32 dims[rank]
        float32 data, row-major
    u32 CRC-32 of every byte after the magic

Run metadata (seed, training config) travels as a rank-1 tensor named
``__meta__`` whose float32 words are the raw bytes of a space-padded UTF-8
JSON document. Its bits are copied, never computed on, so it round-trips
exactly.
"""

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .model import build_covidlite

MAGIC = b"CVL1"
FORMAT_VERSION = 1
META_TENSOR = "__meta__"


class WeightFileError(Exception):
    pass


class BadMagicError(WeightFileError):
    pass


class VersionMismatchError(WeightFileError):
    pass


class TruncatedFileError(WeightFileError):
    pass


class ChecksumError(WeightFileError):
    pass


def _pack_meta(meta):
    raw = json.dumps(meta, sort_keys=True).encode("utf-8")
    raw += b" " * (-len(raw) % 4)
    return np.frombuffer(raw, dtype="<f4")


def _unpack_meta(arr):
    return json.loads(arr.astype("<f4").tobytes().decode("utf-8"))


def encode_weights(tensors, num_classes, meta=None):
    """Serialize ``{name: array}`` to bytes."""
    items = list(tensors.items())
    if meta is not None:
        items.append((META_TENSOR, _pack_meta(meta)))
    body = [struct.pack("<III", FORMAT_VERSION, num_classes, len(items))]
    for name, arr in items:
        arr = np.asarray(arr)
        if arr.dtype != np.float32:
            arr = arr.astype(np.float32)
        encoded = name.encode("utf-8")
        body.append(struct.pack("<H", len(encoded)))
        body.append(encoded)
        body.append(struct.pack("<B", arr.ndim))
        body.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        body.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    payload = b"".join(body)
    return MAGIC + payload + struct.pack("<I", zlib.crc32(payload))


def decode_weights(data):
    """Parse bytes into ``(num_classes, {name: array}, meta)``."""
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagicError(f"bad magic {bytes(data[:4])!r}, expected {MAGIC!r}")
    if len(data) < 4 + 12 + 4:
        raise TruncatedFileError(f"file is {len(data)} bytes, too short for a header")
    payload, (crc,) = data[4:-4], struct.unpack("<I", data[-4:])
    version, num_classes, count = struct.unpack_from("<III", payload, 0)
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"format version {version}, expected {FORMAT_VERSION}")
    tensors = {}
    pos = 12
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<H", payload, pos)
            pos += 2
            if pos + n > len(payload):
                raise struct.error("name")
            name = payload[pos : pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<B", payload, pos)
            pos += 1
            dims = struct.unpack_from(f"<{rank}I", payload, pos)
            pos += 4 * rank
            size = int(np.prod(dims, dtype=np.int64)) * 4
            if pos + size > len(payload):
                raise struct.error("data")
            tensors[name] = (
                np.frombuffer(payload, dtype="<f4", count=size // 4, offset=pos).reshape(dims).copy()
            )
            pos += size
    except struct.error as exc:
        raise TruncatedFileError(f"file ends inside tensor record at payload offset {pos}") from exc
    except UnicodeDecodeError as exc:
        raise ChecksumError("corrupt tensor name") from exc
    if pos != len(payload) or zlib.crc32(payload) != crc:
        raise ChecksumError("CRC-32 mismatch")
    meta = _unpack_meta(tensors.pop(META_TENSOR)) if META_TENSOR in tensors else {}
    return num_classes, tensors, meta


def save_weights(model, path, meta=None):
    """Write every parameter and moving statistic of ``model``."""
    meta = {"seed": model.seed, **(meta or {})}
    data = encode_weights(model.state_dict(), model.num_classes, meta)
    Path(path).write_bytes(data)
    return Path(path)


def load_weights(path):
    """Rebuild a model from a weight file; its metadata lands on ``model.meta``."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"weight file not found: {path}")
    num_classes, tensors, meta = decode_weights(path.read_bytes())
    model = build_covidlite(num_classes, seed=meta.get("seed", 0))
    model.load_state_dict(tensors)
    model.meta = meta
    return model
