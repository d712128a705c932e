"""Versioned single-file checkpoints.

Layout::

    b"STOWERCK"                 8-byte magic
    uint32 LE                   format version
    uint64 LE                   header length in bytes
    header                      UTF-8 JSON
    payload                     little-endian float32 values

The header lists, per component tag, each parameter's name, shape, byte
offset and byte length within the payload, plus the config, vocabulary and
seed record of the run.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"STOWERCK"
FORMAT_VERSION = 1
COMPONENT_TAGS = ("backbone", "vae", "style_table", "scorer", "char_lm", "eval_classifier")


class CheckpointError(IOError):
    pass


@dataclass
class Checkpoint:
    components: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)
    meta: dict[str, dict] = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    vocab: list[str] | None = None
    seeds: dict = field(default_factory=dict)

    def checksum(self, tag: str) -> str:
        return params_checksum(self.components[tag])


def params_checksum(params: dict[str, np.ndarray]) -> str:
    """SHA-256 over sorted names and float32 bytes (matches ``Module.checksum``)."""
    h = hashlib.sha256()
    for name in sorted(params):
        h.update(name.encode())
        h.update(np.ascontiguousarray(params[name], dtype=np.float32).tobytes())
    return h.hexdigest()


def save_checkpoint(ckpt: Checkpoint, path) -> str:
    """Write atomically; returns the SHA-256 of the file."""
    entries, chunks, offset = {}, [], 0
    for tag, params in ckpt.components.items():
        if tag not in COMPONENT_TAGS:
            raise ValueError(f"unknown component tag {tag!r}")
        listing = []
        for name in sorted(params):
            arr = np.ascontiguousarray(params[name], dtype="<f4")
            listing.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": arr.nbytes})
            chunks.append(arr.tobytes())
            offset += arr.nbytes
        entries[tag] = listing
    header = json.dumps({
        "format_version": FORMAT_VERSION,
        "components": entries,
        "meta": ckpt.meta,
        "config": ckpt.config,
        "vocab": ckpt.vocab,
        "seeds": ckpt.seeds,
        "payload_bytes": offset,
    }, sort_keys=True).encode("utf-8")
    blob = MAGIC + struct.pack("<I", FORMAT_VERSION) + struct.pack("<Q", len(header)) + header + b"".join(chunks)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(blob)
    os.replace(tmp, path)
    return hashlib.sha256(blob).hexdigest()


def load_checkpoint(path, tags=None) -> Checkpoint:
    """Read a checkpoint, optionally only the components in ``tags``."""
    blob = Path(path).read_bytes()
    if len(blob) < len(MAGIC) + 12:
        raise CheckpointError(f"{path}: truncated before the header (file is {len(blob)} bytes)")
    if blob[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    (version,) = struct.unpack("<I", blob[8:12])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    (hlen,) = struct.unpack("<Q", blob[12:20])
    start = 20
    if len(blob) < start + hlen:
        raise CheckpointError(f"{path}: truncated inside the header")
    try:
        header = json.loads(blob[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from None
    payload = memoryview(blob)[start + hlen:]
    wanted = set(header["components"]) if tags is None else set(tags)
    missing = wanted - set(header["components"])
    if missing:
        raise CheckpointError(f"{path}: component(s) {sorted(missing)} not present")
    ckpt = Checkpoint(meta=header.get("meta", {}), config=header.get("config", {}),
                      vocab=header.get("vocab"), seeds=header.get("seeds", {}))
    for tag in sorted(wanted):
        params = {}
        for entry in header["components"][tag]:
            end = entry["offset"] + entry["nbytes"]
            if end > len(payload):
                raise CheckpointError(f"{path}: payload truncated in component {tag!r}, "
                                      f"parameter {entry['name']!r}")
            arr = np.frombuffer(payload[entry["offset"]:end], dtype="<f4").astype(np.float32)
            params[entry["name"]] = arr.reshape(entry["shape"])
        ckpt.components[tag] = params
    return ckpt


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
