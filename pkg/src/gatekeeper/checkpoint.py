"""Binary checkpoint container.

Layout::

    8 bytes   magic  b"GKRNN\\0\\0\\1"
    8 bytes   manifest length, unsigned little-endian
    n bytes   manifest, UTF-8 JSON (sorted keys, compact separators)
    payload   tensors as little-endian float32, row-major, in manifest order

The manifest holds the schema version, the model and experiment configs, a
tensor directory (name, shape, offset, nbytes, crc32), the total payload
length, and the reserved ``key``, ``signature`` and ``trigger`` sections.
"""
from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .model import SequenceModel
from .signature import Key, Signature
from .training import TriggerSet

MAGIC = b"GKRNN\x00\x00\x01"
SCHEMA_VERSION = 1
_LEN = struct.Struct("<Q")


class CheckpointError(Exception):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointCorruptError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    model: SequenceModel
    key: Key | None = None
    signature: Signature | None = None
    trigger: TriggerSet | None = None
    config: dict | None = None
    metrics: dict | None = None


def _tensors(ckpt: Checkpoint):
    out = [(f"model.{n}", p.value) for n, p in ckpt.model.params.items()]
    if ckpt.key is not None:
        out.append(("key.sequences", ckpt.key.sequences))
    if ckpt.trigger is not None:
        t = ckpt.trigger
        out += [("trigger.inputs", t.inputs), ("trigger.assigned_labels", t.assigned_labels),
                ("trigger.original_labels", t.original_labels), ("trigger.source_index", t.source_index)]
    return out


def encode(ckpt: Checkpoint) -> bytes:
    directory, chunks, offset = [], [], 0
    for name, arr in _tensors(ckpt):
        arr = np.asarray(arr)
        if np.issubdtype(arr.dtype, np.integer) and arr.size and np.abs(arr).max() >= 2 ** 24:
            raise CheckpointError(f"{name}: integer values beyond 2**24 do not fit float32 exactly")
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        directory.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw),
                          "crc32": zlib.crc32(raw)})
        chunks.append(raw)
        offset += len(raw)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "model": ckpt.model.config(),
        "config": ckpt.config,
        "metrics": ckpt.metrics,
        "tensors": directory,
        "payload_nbytes": offset,
        "key": None if ckpt.key is None else ckpt.key.metadata(),
        "signature": None if ckpt.signature is None else ckpt.signature.to_dict(),
        "trigger": None if ckpt.trigger is None else {
            "num_classes": ckpt.trigger.num_classes,
            "tokens": bool(np.issubdtype(np.asarray(ckpt.trigger.inputs).dtype, np.integer))},
    }
    head = json.dumps(manifest, sort_keys=True, separators=(",", ":"), allow_nan=False).encode("utf-8")
    return MAGIC + _LEN.pack(len(head)) + head + b"".join(chunks)


def save_checkpoint(path, model: SequenceModel, key: Key | None = None, signature: Signature | None = None,
                    trigger: TriggerSet | None = None, config: dict | None = None,
                    metrics: dict | None = None) -> int:
    """Write a checkpoint and return its size in bytes."""
    data = encode(Checkpoint(model, key, signature, trigger, config, metrics))
    with open(path, "wb") as fh:
        fh.write(data)
    return len(data)


def read_manifest(data: bytes) -> tuple[dict, int]:
    if len(data) < len(MAGIC) + _LEN.size:
        raise CheckpointTruncatedError(f"file has {len(data)} bytes, shorter than the 16-byte header")
    if data[:5] != MAGIC[:5]:
        raise CheckpointCorruptError("not a checkpoint: bad magic")
    if data[:8] != MAGIC:
        raise CheckpointVersionError(f"container version {data[5:8]!r} is not supported, expected {MAGIC[5:8]!r}")
    (n,) = _LEN.unpack_from(data, 8)
    start = 16
    if len(data) < start + n:
        raise CheckpointTruncatedError(f"manifest declares {n} bytes, only {len(data) - start} present")
    try:
        manifest = json.loads(data[start:start + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointCorruptError(f"manifest is not valid JSON: {exc}") from None
    if not isinstance(manifest, dict) or "schema_version" not in manifest:
        raise CheckpointCorruptError("manifest lacks a schema version")
    if manifest["schema_version"] != SCHEMA_VERSION:
        raise CheckpointVersionError(
            f"schema version {manifest['schema_version']} is not supported, expected {SCHEMA_VERSION}")
    return manifest, start + n


def decode(data: bytes) -> Checkpoint:
    manifest, base = read_manifest(data)
    try:
        directory = manifest["tensors"]
        declared = manifest["payload_nbytes"]
    except KeyError as exc:
        raise CheckpointCorruptError(f"manifest lacks {exc}") from None
    have = len(data) - base
    if have < declared:
        raise CheckpointTruncatedError(f"payload declares {declared} bytes, only {have} present")
    if have > declared:
        raise CheckpointCorruptError(f"{have - declared} unexpected bytes after the payload")
    arrays, expect = {}, 0
    for t in directory:
        shape = tuple(t["shape"])
        nbytes = 4 * int(np.prod(shape, dtype=np.int64))
        if t["offset"] != expect or t["nbytes"] != nbytes:
            raise CheckpointCorruptError(f"{t['name']}: directory offsets inconsistent with shapes")
        raw = data[base + t["offset"]: base + t["offset"] + nbytes]
        if zlib.crc32(raw) != t["crc32"]:
            raise CheckpointCorruptError(f"{t['name']}: checksum mismatch")
        arrays[t["name"]] = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(shape)
        expect += nbytes
    if expect != declared:
        raise CheckpointCorruptError("tensor directory does not cover the payload")

    model = SequenceModel.from_config(manifest["model"])
    model.load_state_dict({n[len("model."):]: v for n, v in arrays.items() if n.startswith("model.")})
    key = None
    if manifest.get("key") is not None:
        key = Key.from_metadata(manifest["key"], arrays["key.sequences"])
    sig = None if manifest.get("signature") is None else Signature.from_dict(manifest["signature"])
    trigger = None
    if manifest.get("trigger") is not None:
        meta = manifest["trigger"]
        inputs = arrays["trigger.inputs"]
        if meta["tokens"]:
            inputs = inputs.astype(np.int64)
        trigger = TriggerSet(inputs, arrays["trigger.assigned_labels"].astype(np.int64),
                             arrays["trigger.original_labels"].astype(np.int64),
                             arrays["trigger.source_index"].astype(np.int64), meta["num_classes"])
    return Checkpoint(model, key, sig, trigger, manifest.get("config"), manifest.get("metrics"))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return decode(fh.read())
