"""Deterministic single-file container: JSON header + raw little-endian arrays.

Layout::

    b"INNMCKPT" | u32 format version | u64 header length | header JSON | payload

The header lists each array's name, dtype, shape and byte offset, and the
SHA-256 of the payload. Identical inputs always produce identical bytes.
"""

import hashlib
import json
import os
import struct

import numpy as np

from .errors import CheckpointError

MAGIC = b"INNMCKPT"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<IQ")
_DTYPES = {"float64": "<f8", "int64": "<i8"}


def dumps(meta, arrays):
    entries, chunks, offset = [], [], 0
    for name in sorted(arrays):
        arr = np.asarray(arrays[name])
        kind = "int64" if np.issubdtype(arr.dtype, np.integer) else "float64"
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[kind]).tobytes()
        entries.append(
            {"name": name, "dtype": kind, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)}
        )
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    header = json.dumps(
        {"meta": meta, "arrays": entries, "sha256": hashlib.sha256(payload).hexdigest()},
        sort_keys=True,
        separators=(",", ":"),
        allow_nan=False,
    ).encode("utf-8")
    return MAGIC + _PREFIX.pack(FORMAT_VERSION, len(header)) + header + payload


def loads(blob):
    head = len(MAGIC) + _PREFIX.size
    if len(blob) < head or blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, hlen = _PREFIX.unpack(blob[len(MAGIC) : head])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format version {version}")
    if len(blob) < head + hlen:
        raise CheckpointError("checkpoint truncated inside header")
    try:
        header = json.loads(blob[head : head + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
    payload = blob[head + hlen :]
    expected = sum(e["nbytes"] for e in header["arrays"])
    if len(payload) != expected:
        raise CheckpointError(f"checkpoint payload is {len(payload)} bytes, expected {expected}")
    if hashlib.sha256(payload).hexdigest() != header["sha256"]:
        raise CheckpointError("checkpoint payload checksum mismatch")
    arrays = {}
    for e in header["arrays"]:
        raw = payload[e["offset"] : e["offset"] + e["nbytes"]]
        arrays[e["name"]] = np.frombuffer(raw, dtype=_DTYPES[e["dtype"]]).reshape(e["shape"]).copy()
    return header["meta"], arrays


def write(path, meta, arrays):
    blob = dumps(meta, arrays)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


def read(path):
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    return loads(blob)
