"""Binary checkpoint format.

Layout::

    b"NPRL" | version u32 LE | header length u64 LE | header (UTF-8 JSON) | payload

The header carries the architecture, head, seed, free-form metadata, a
manifest of named tensors (dtype float32, shape, byte offset and length into
the payload, parameter or buffer) and the CRC32 of the payload.  Payload
tensors are raw little-endian float32 in manifest order.
"""
from __future__ import annotations

import json
import os
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .model import Head, ModelGraph, TrunkConfig, build_model
from .tensor import Tensor

MAGIC = b"NPRL"
VERSION = 1
_PREFIX = struct.Struct("<4sIQ")


def _encode(model: ModelGraph) -> bytes:
    manifest, chunks, offset = [], [], 0
    for role, items in (("param", model.params.items()), ("buffer", model.buffers.items())):
        for name, value in items:
            arr = value.data if isinstance(value, Tensor) else value
            raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
            manifest.append(
                {"name": name, "role": role, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)}
            )
            chunks.append(raw)
            offset += len(raw)
    payload = b"".join(chunks)
    header = {
        "format": "nprl-checkpoint",
        "trunk": {k: list(v) if isinstance(v, tuple) else v for k, v in model.config_dict()["trunk"].items()},
        "head": {"kind": model.head.kind, "n_outputs": model.head.n_outputs},
        "seed": model.seed,
        "n_parameters": model.n_parameters(),
        "meta": model.meta,
        "tensors": manifest,
        "payload_crc32": zlib.crc32(payload),
        "payload_bytes": len(payload),
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _PREFIX.pack(MAGIC, VERSION, len(hbytes)) + hbytes + payload


def save_checkpoint(model: ModelGraph, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(_encode(model))
    os.replace(tmp, path)
    return path


def read_header(path) -> dict:
    header, _ = _read(Path(path))
    return header


def _read(path: Path) -> tuple[dict, bytes]:
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"{path}: cannot read checkpoint ({exc})") from exc
    if len(blob) < _PREFIX.size:
        raise CheckpointError(f"{path}: truncated before header")
    magic, version, hlen = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}, not an nprl checkpoint")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version} (expected {VERSION})")
    start = _PREFIX.size
    if len(blob) < start + hlen:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(blob[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from exc
    payload = blob[start + hlen:]
    if len(payload) != header.get("payload_bytes"):
        raise CheckpointError(f"{path}: payload is {len(payload)} bytes, header says {header.get('payload_bytes')}")
    if zlib.crc32(payload) != header.get("payload_crc32"):
        raise CheckpointError(f"{path}: payload checksum mismatch")
    return header, payload


def load_checkpoint(path) -> ModelGraph:
    header, payload = _read(Path(path))
    try:
        trunk = TrunkConfig(**header["trunk"])
        head = Head(**header["head"])
        model = build_model(trunk, head, seed=int(header["seed"]))
        for entry in header["tensors"]:
            raw = payload[entry["offset"]:entry["offset"] + entry["nbytes"]]
            arr = np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(entry["shape"])
            name = entry["name"]
            if entry["role"] == "param":
                if model.params[name].shape != arr.shape:
                    raise CheckpointError(f"{path}: tensor {name} has shape {arr.shape}")
                model.params[name] = Tensor(arr, requires_grad=True, name=name)
            else:
                model.buffers[name] = arr
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: inconsistent header ({exc})") from exc
    model.meta = dict(header.get("meta", {}))
    return model
