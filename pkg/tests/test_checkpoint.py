import json
import struct

import numpy as np
import pytest

from gatekeeper.checkpoint import (MAGIC, Checkpoint, CheckpointCorruptError, CheckpointError,
                                   CheckpointTruncatedError, CheckpointVersionError, decode, encode,
                                   load_checkpoint, read_manifest, save_checkpoint)
from gatekeeper.data import generate_synthetic_text
from gatekeeper.model import SequenceModel
from gatekeeper.numeric import Rng, relative_error
from gatekeeper.signature import encode_signature, generate_key
from gatekeeper.training import build_trigger_set


@pytest.fixture
def ckpt():
    ds = generate_synthetic_text(Rng(0), 30, V=12, C=3, length_range=(4, 6))
    m = SequenceModel("lstm", hidden_size=8, num_classes=3, vocab_size=12, embed_dim=4, bidirectional=True, seed=3)
    key = generate_key("batch", Rng(1), 2, 3, 4, embedding=m.params["embedding.weight"].value, corpus=ds.inputs)
    trig, _ = build_trigger_set(ds, 5, Rng(2))
    return Checkpoint(m, key, encode_signature("a", 8), trig, {"note": "x"}, {"acc": 0.5}), ds


def test_round_trip_is_byte_identical(ckpt):
    c, _ = ckpt
    first = encode(c)
    assert first[:8] == MAGIC
    assert encode(decode(first)) == first


def test_round_trip_preserves_behaviour(ckpt, tmp_path):
    c, ds = ckpt
    n = save_checkpoint(tmp_path / "m.ckpt", c.model, c.key, c.signature, c.trigger, c.config, c.metrics)
    back = load_checkpoint(tmp_path / "m.ckpt")
    assert n == (tmp_path / "m.ckpt").stat().st_size
    a, b = c.model(ds.inputs, c.key), back.model(ds.inputs, back.key)
    assert relative_error(b, a) < 1e-6
    assert back.key == c.key and back.signature.text == "a"
    assert np.array_equal(back.trigger.inputs, c.trigger.inputs) and back.trigger.inputs.dtype == np.int64
    assert np.array_equal(back.trigger.assigned_labels, c.trigger.assigned_labels)
    assert back.config == {"note": "x"} and back.metrics == {"acc": 0.5}
    assert back.model.config() == c.model.config()


def test_optional_sections(ckpt):
    c, _ = ckpt
    bare = decode(encode(Checkpoint(c.model)))
    assert bare.key is None and bare.signature is None and bare.trigger is None
    manifest, _ = read_manifest(encode(Checkpoint(c.model)))
    assert manifest["key"] is None and manifest["trigger"] is None


def test_manifest_is_sorted_compact_json(ckpt):
    data = encode(ckpt[0])
    (n,) = struct.unpack_from("<Q", data, 8)
    raw = data[16:16 + n].decode()
    assert raw == json.dumps(json.loads(raw), sort_keys=True, separators=(",", ":"))


def test_payload_byte_flip_is_corrupt(ckpt):
    data = bytearray(encode(ckpt[0]))
    data[-5] ^= 0x40
    with pytest.raises(CheckpointCorruptError, match="checksum"):
        decode(bytes(data))


@pytest.mark.parametrize("cut", [3, 12, 100, 1])
def test_truncation(ckpt, cut):
    data = encode(ckpt[0])
    if cut == 100:
        (n,) = struct.unpack_from("<Q", data, 8)
        cut = len(data) - (16 + n // 2)
    with pytest.raises(CheckpointTruncatedError):
        decode(data[:-cut] if cut != 12 else data[:12])


def test_trailing_bytes_are_corrupt(ckpt):
    with pytest.raises(CheckpointCorruptError):
        decode(encode(ckpt[0]) + b"\x00")


def test_version_mismatch(ckpt):
    data = encode(ckpt[0])
    with pytest.raises(CheckpointVersionError):
        decode(data[:7] + b"\x02" + data[8:])
    (n,) = struct.unpack_from("<Q", data, 8)
    manifest = json.loads(data[16:16 + n])
    manifest["schema_version"] = 2
    head = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    with pytest.raises(CheckpointVersionError, match="schema version 2"):
        decode(MAGIC + struct.pack("<Q", len(head)) + head + data[16 + n:])


def test_bad_magic_and_bad_json(ckpt):
    data = encode(ckpt[0])
    with pytest.raises(CheckpointCorruptError, match="magic"):
        decode(b"NOTGK" + data[5:])
    broken = data[:16] + b"[" + data[17:]
    with pytest.raises(CheckpointCorruptError, match="JSON"):
        decode(broken)
    assert all(issubclass(e, CheckpointError) for e in
               (CheckpointCorruptError, CheckpointVersionError, CheckpointTruncatedError))


def test_large_integers_are_rejected(ckpt):
    c, _ = ckpt
    c.trigger.source_index = c.trigger.source_index + 2 ** 24
    with pytest.raises(CheckpointError, match="2\\*\\*24"):
        encode(c)
