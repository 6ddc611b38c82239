"""Checkpoint container: a JSON manifest followed by a flat blob of
little-endian float32 tensors.

Layout: 4-byte magic, uint32 manifest length, manifest JSON (canonical:
sorted keys, no whitespace), then the blob. Tensor entries are sorted by
name, so load -> save reproduces a file byte for byte.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import (CheckpointManifestError, CheckpointTruncatedError,
                     CheckpointVersionError)

MAGIC = b"RFCK"
FORMAT_VERSION = 1


def save_tensors(path, tensors: dict, meta: dict | None = None):
    """Write named float32 arrays plus a JSON-able metadata dict."""
    entries = []
    blobs = []
    offset = 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        nbytes = arr.nbytes
        entries.append({"name": name, "shape": list(arr.shape),
                        "offset": offset, "nbytes": nbytes})
        blobs.append(arr.tobytes())
        offset += nbytes
    manifest = {"format_version": FORMAT_VERSION,
                "meta": meta if meta is not None else {},
                "tensors": entries}
    mbytes = json.dumps(manifest, sort_keys=True,
                        separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(mbytes)))
        fh.write(mbytes)
        for b in blobs:
            fh.write(b)


def load_tensors(path):
    """Read a checkpoint; returns (tensors dict, meta dict)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 8 or raw[:4] != MAGIC:
        raise CheckpointManifestError(f"{path}: not a rectiflow checkpoint")
    (mlen,) = struct.unpack("<I", raw[4:8])
    if 8 + mlen > len(raw):
        raise CheckpointTruncatedError(
            f"{path}: manifest claims {mlen} bytes, file has {len(raw) - 8}")
    try:
        manifest = json.loads(raw[8:8 + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointManifestError(f"{path}: unreadable manifest: {exc}") from exc
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"{path}: format version {version!r}, expected {FORMAT_VERSION}")
    blob = raw[8 + mlen:]
    tensors = {}
    for entry in manifest.get("tensors", []):
        try:
            name, shape = entry["name"], tuple(entry["shape"])
            offset, nbytes = entry["offset"], entry["nbytes"]
        except (KeyError, TypeError) as exc:
            raise CheckpointManifestError(f"{path}: malformed tensor entry") from exc
        if int(np.prod(shape, dtype=np.int64)) * 4 != nbytes:
            raise CheckpointManifestError(
                f"{path}: entry {name!r} shape {shape} disagrees with {nbytes} bytes")
        if offset + nbytes > len(blob):
            raise CheckpointTruncatedError(
                f"{path}: blob too short for tensor {name!r}")
        tensors[name] = np.frombuffer(
            blob, dtype="<f4", count=nbytes // 4, offset=offset).reshape(shape).copy()
    return tensors, manifest.get("meta", {})
