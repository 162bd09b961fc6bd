"""Self-describing binary container: magic, JSON header, little-endian float64 blob.

Layout::

    8 bytes   magic (format identifier)
    8 bytes   header length, little-endian uint64
    N bytes   UTF-8 JSON header (includes "version" and the array manifest)
    ...       concatenated little-endian float64 arrays in manifest order
"""
import json
import os
import struct

import numpy as np


class FormatError(ValueError):
    pass


def write_container(path, magic: bytes, version: int, header: dict, arrays):
    """Write named arrays atomically (temp file then rename)."""
    if len(magic) != 8:
        raise ValueError("magic must be 8 bytes")
    manifest = [{"name": name, "shape": list(np.shape(a))} for name, a in arrays]
    head = dict(header, version=version, arrays=manifest)
    blob = json.dumps(head, sort_keys=True).encode("utf-8")
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())
    os.replace(tmp, path)


def read_container(path, magic: bytes, version: int):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != magic:
        raise FormatError(f"{path}: bad magic header {raw[:8]!r}, expected {magic!r}")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    try:
        head = json.loads(raw[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt header") from exc
    if head.get("version") != version:
        raise FormatError(f"{path}: format version {head.get('version')} != supported {version}")
    arrays = {}
    pos = 16 + hlen
    for entry in head["arrays"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        end = pos + 8 * count
        if end > len(raw):
            raise FormatError(f"{path}: truncated data for {entry['name']}")
        arrays[entry["name"]] = np.frombuffer(raw[pos:end], dtype="<f8").astype(float).reshape(entry["shape"])
        pos = end
    return head, arrays
