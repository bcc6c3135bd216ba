"""Single-file model container: JSON header plus little-endian float64 payloads.

Layout: 4-byte magic ``SBCK``, uint32-LE header length, UTF-8 JSON header
``{"version", "kind", "config", "tensors": [{"name", "shape"}, ...]}``,
then each tensor's row-major ``<f8`` bytes in header order. The same container
serializes every detector kind (the ``kind`` tag selects the interpretation).
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .exceptions import IngestError

MAGIC = b"SBCK"
FORMAT_VERSION = 1


def save_checkpoint(path, kind: str, config: dict, tensors: dict[str, np.ndarray]) -> None:
    names = sorted(tensors)
    header = {
        "version": FORMAT_VERSION,
        "kind": kind,
        "config": config,
        "tensors": [{"name": n, "shape": list(tensors[n].shape)} for n in names],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(tensors[n], dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[str, dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise IngestError(f"{path}: not a checkpoint file (bad magic)")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        if header.get("version") != FORMAT_VERSION:
            raise IngestError(
                f"{path}: unsupported checkpoint version {header.get('version')}"
            )
        tensors = {}
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * 8)
            if len(raw) != count * 8:
                raise IngestError(f"{path}: truncated payload for tensor '{entry['name']}'")
            tensors[entry["name"]] = (
                np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
            )
    return header["kind"], header["config"], tensors
