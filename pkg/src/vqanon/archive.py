"""Single-file container for named arrays plus a JSON header.

Every on-disk artifact of the package (feature caches, x-vectors, speaker
pools, checkpoints) uses this layout::

    offset 0   4 bytes   magic b"VQAR"
    offset 4   4 bytes   header length H, uint32 little-endian
    offset 8   H bytes   UTF-8 JSON header
    offset 8+H           payload: arrays back to back, C order, little-endian

The header is a JSON object::

    {"version": 1, "kind": "<features|xvector|pool|checkpoint>",
     "meta": {...free-form...},
     "arrays": [{"name": ..., "dtype": "<f4", "shape": [...],
                 "offset": <bytes from payload start>, "nbytes": ...}, ...]}

The header is serialized with sorted keys and no whitespace so identical
inputs give byte-identical files.
"""

import json
import os
import struct

import numpy as np

from vqanon.errors import DataError

MAGIC = b"VQAR"
FORMAT_VERSION = 1

_ALLOWED_DTYPES = {"<f4", "<f8", "<i8", "<i4", "|u1", "|b1"}


def _le(arr):
    arr = np.asarray(arr)
    if arr.dtype == np.bool_:
        return np.ascontiguousarray(arr)
    dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder not in ("|", "<") else arr.dtype
    return np.ascontiguousarray(arr, dtype=dt)


def encode(kind, arrays, meta=None):
    """Serialize ``arrays`` (name -> ndarray) into archive bytes."""
    entries = []
    chunks = []
    offset = 0
    for name, arr in arrays.items():
        arr = _le(arr)
        dtype = arr.dtype.str
        if dtype not in _ALLOWED_DTYPES:
            raise TypeError(f"unsupported dtype {dtype} for array {name!r}")
        raw = arr.tobytes(order="C")
        entries.append({"name": name, "dtype": dtype, "shape": list(arr.shape),
                        "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = {"version": FORMAT_VERSION, "kind": kind, "meta": meta or {}, "arrays": entries}
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<I", len(hbytes)) + hbytes + b"".join(chunks)


def decode(data, kind=None):
    """Parse archive bytes. Returns ``(arrays, meta)``."""
    if len(data) < 8 or data[:4] != MAGIC:
        raise DataError("not a vqanon archive (bad magic)")
    (hlen,) = struct.unpack("<I", data[4:8])
    if 8 + hlen > len(data):
        raise DataError("truncated archive header")
    try:
        header = json.loads(data[8:8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"corrupt archive header: {exc}") from exc
    if header.get("version") != FORMAT_VERSION:
        raise DataError(f"unsupported archive version {header.get('version')}")
    if kind is not None and header.get("kind") != kind:
        raise DataError(f"expected archive kind {kind!r}, found {header.get('kind')!r}")
    payload = memoryview(data)[8 + hlen:]
    arrays = {}
    for e in header["arrays"]:
        start, stop = e["offset"], e["offset"] + e["nbytes"]
        if stop > len(payload):
            raise DataError(f"truncated payload for array {e['name']!r}")
        arr = np.frombuffer(payload[start:stop], dtype=np.dtype(e["dtype"]))
        arrays[e["name"]] = arr.reshape(e["shape"]).copy()
    return arrays, header["meta"]


def save(path, kind, arrays, meta=None):
    data = encode(kind, arrays, meta)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


def load(path, kind=None):
    with open(path, "rb") as f:
        data = f.read()
    try:
        return decode(data, kind)
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from exc
