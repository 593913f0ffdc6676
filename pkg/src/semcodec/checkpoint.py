"""Flat named-array container used for model checkpoints.

Layout, all little-endian:
  magic "SCKP", version u32, count u32,
  then per array (sorted by name for reproducible bytes):
    name_len u32, name utf8, rank u32, rank dims u32, values f64,
  then json_len u32 and a UTF-8 JSON metadata object with sorted keys.
"""

import json

import numpy as np

from .errors import FormatError, ParameterError
from .fileio import ByteReader, atomic_write_bytes, pack_u32

CHECKPOINT_MAGIC = b"SCKP"
CHECKPOINT_VERSION = 1


def write_arrays(path, arrays, metadata=None):
    metadata = metadata if metadata is not None else {}
    parts = [CHECKPOINT_MAGIC, pack_u32(CHECKPOINT_VERSION), pack_u32(len(arrays))]
    for name in sorted(arrays):
        arr = np.asarray(arrays[name], dtype=np.float64)
        encoded = name.encode("utf-8")
        if not encoded:
            raise ParameterError("array names must be non-empty")
        parts.append(pack_u32(len(encoded)))
        parts.append(encoded)
        parts.append(pack_u32(arr.ndim))
        for dim in arr.shape:
            parts.append(pack_u32(dim))
        parts.append(arr.astype("<f8").tobytes())
    blob = json.dumps(metadata, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts.append(pack_u32(len(blob)))
    parts.append(blob)
    atomic_write_bytes(path, b"".join(parts))


def read_arrays(path):
    with open(path, "rb") as f:
        data = f.read()
    r = ByteReader(data, "checkpoint")
    r.magic(CHECKPOINT_MAGIC)
    version = r.u32("version")
    if version != CHECKPOINT_VERSION:
        raise FormatError(
            f"unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    count = r.u32("array count")
    arrays = {}
    for _ in range(count):
        name_len = r.u32("name length")
        name = r.utf8(name_len, "array name")
        rank = r.u32("rank")
        if rank > 8:
            raise FormatError(f"array {name!r} declares implausible rank {rank}")
        shape = tuple(r.u32(f"dim {i} of {name}") for i in range(rank))
        size = 1
        for dim in shape:
            size *= dim
        values = r.f64_array(size, f"values of {name}").reshape(shape)
        if name in arrays:
            raise FormatError(f"duplicate array name {name!r}")
        arrays[name] = values
    json_len = r.u32("metadata length")
    blob = r.take(json_len, "metadata JSON")
    r.expect_end()
    try:
        metadata = json.loads(blob.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"checkpoint metadata is not valid JSON: {exc}") from exc
    if not isinstance(metadata, dict):
        raise FormatError("checkpoint metadata must be a JSON object")
    return arrays, metadata
