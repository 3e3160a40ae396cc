"""Tagged binary container: magic + version + JSON header + raw little-endian arrays.

Layout::

    8 bytes   magic (ASCII, right-padded with NUL)
    4 bytes   format version, uint32 LE
    8 bytes   header length N, uint64 LE
    N bytes   UTF-8 JSON header {"meta": ..., "arrays": [{name, dtype, shape, offset, nbytes}]}
    ...       concatenated array payloads

Round-trips are bit-exact; dtypes are stored in explicit little-endian form.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

_PREFIX = struct.Struct("<8sIQ")


class FormatError(ValueError):
    """File is not a valid container of the expected kind or version."""


def write_blob(path, magic: bytes, version: int, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    if len(magic) > 8:
        raise ValueError("magic tag longer than 8 bytes")
    entries, payloads, offset = [], [], 0
    for name, arr in arrays.items():
        arr = np.asarray(arr, order="C")  # ascontiguousarray would promote 0-d to 1-d
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = le.tobytes()
        entries.append(
            {"name": name, "dtype": le.dtype.str, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)}
        )
        payloads.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": meta, "arrays": entries}, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(magic.ljust(8, b"\0"), version, len(header)))
        fh.write(header)
        for raw in payloads:
            fh.write(raw)


def read_blob(path, magic: bytes, version: int) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if len(data) < _PREFIX.size:
        raise FormatError(f"{path}: truncated file")
    tag, ver, hlen = _PREFIX.unpack_from(data)
    if tag != magic.ljust(8, b"\0"):
        raise FormatError(f"{path}: bad magic tag {tag.rstrip(bytes(1))!r}, expected {magic!r}")
    if ver != version:
        raise FormatError(f"{path}: format version {ver} not supported (expected {version})")
    start = _PREFIX.size + hlen
    try:
        header = json.loads(data[_PREFIX.size:start].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt header") from exc
    arrays = {}
    for e in header["arrays"]:
        lo = start + e["offset"]
        hi = lo + e["nbytes"]
        if hi > len(data):
            raise FormatError(f"{path}: payload for {e['name']!r} truncated")
        arr = np.frombuffer(data[lo:hi], dtype=np.dtype(e["dtype"])).reshape(e["shape"])
        arrays[e["name"]] = arr.astype(arr.dtype.newbyteorder("="))
    return header["meta"], arrays
