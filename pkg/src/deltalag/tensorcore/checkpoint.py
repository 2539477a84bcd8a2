"""Named-array checkpoint container.

Layout (all integers little-endian)::

    bytes 0..7     magic  b"DLAGCKPT"
    bytes 8..15    uint64 manifest length M
    bytes 16..16+M manifest, UTF-8 JSON:
                   {"format": 1,
                    "arrays": [{"name": str, "shape": [int, ...],
                                "offset": int, "nbytes": int}, ...]}
    remainder      payload; each array is C-order little-endian float64 starting
                   at ``offset`` bytes from the start of the payload

Arrays appear in the manifest in parameter order, and ``nbytes`` always equals
8 * prod(shape).
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from ..errors import DimensionError, FormatError
from .params import ParamSet

MAGIC = b"DLAGCKPT"
FORMAT_VERSION = 1


def save_checkpoint(params: ParamSet | Mapping[str, np.ndarray], path) -> None:
    arrays = params.arrays() if isinstance(params, ParamSet) else dict(params)
    entries, chunks, offset = [], [], 0
    for name, value in arrays.items():
        data = np.ascontiguousarray(value, dtype="<f8")
        entries.append({"name": name, "shape": list(data.shape), "offset": offset, "nbytes": data.nbytes})
        chunks.append(data.tobytes())
        offset += data.nbytes
    manifest = json.dumps({"format": FORMAT_VERSION, "arrays": entries}, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(manifest)))
        fh.write(manifest)
        for chunk in chunks:
            fh.write(chunk)


def read_checkpoint(path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:8] != MAGIC:
        raise FormatError(f"{path}: not a checkpoint (bad magic or header)")
    (mlen,) = struct.unpack("<Q", raw[8:16])
    if 16 + mlen > len(raw):
        raise FormatError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(raw[16:16 + mlen].decode())
        entries = manifest["arrays"]
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: unreadable manifest ({exc})") from None
    if manifest.get("format") != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format {manifest.get('format')!r}")
    payload = raw[16 + mlen:]
    out = {}
    for e in entries:
        shape = tuple(e["shape"])
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        start, stop = e["offset"], e["offset"] + e["nbytes"]
        if e["nbytes"] != nbytes or start < 0 or stop > len(payload):
            raise FormatError(f"{path}: array {e['name']!r} is truncated or mis-sized")
        out[e["name"]] = np.frombuffer(payload[start:stop], dtype="<f8").reshape(shape).astype(np.float64)
    expected = sum(e["nbytes"] for e in entries)
    if len(payload) != expected:
        raise FormatError(f"{path}: payload is {len(payload)} bytes, manifest declares {expected}")
    return out


def load_checkpoint(path, into: ParamSet | None = None) -> ParamSet:
    """Read a checkpoint; when ``into`` is given, names and shapes must match it."""
    arrays = read_checkpoint(path)
    if into is None:
        return ParamSet(arrays)
    for name, t in into.items():
        if name not in arrays:
            raise DimensionError(f"checkpoint lacks parameter {name!r}")
        if arrays[name].shape != t.shape:
            raise DimensionError(
                f"parameter {name!r}: checkpoint shape {arrays[name].shape}, model expects {t.shape}"
            )
    extra = set(arrays) - set(into)
    if extra:
        raise DimensionError(f"checkpoint has unexpected parameters {sorted(extra)}")
    into.load(arrays)
    return into
