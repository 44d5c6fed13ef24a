"""Canonical encoding: determinism, injectivity, and frozen golden vectors."""

import hashlib

import pytest

from hubpay import codec
from hubpay.errors import EncodingError
from hubpay.messages import PaymentProposal, Promise

from golden import VECTOR_DIR, golden_messages


def test_golden_vectors_frozen():
    for stem, blob in golden_messages():
        path = VECTOR_DIR / f"{stem}.txt"
        assert path.exists(), f"missing vector file {path}; run tests/golden.py"
        recorded_hex, recorded_digest = path.read_text().split()
        assert blob.hex() == recorded_hex, f"{stem} encoding drifted from golden file"
        assert hashlib.sha256(blob).hexdigest() == recorded_digest


def test_identical_promises_encode_identically():
    h = b"\xab" * 32
    a = Promise("ch", "alice", 1, 5, h, 100)
    b = Promise("ch", "alice", 1, 5, h, 100)
    assert a.signing_bytes == b.signing_bytes


def test_differing_amounts_encode_differently():
    h = b"\xab" * 32
    a = Promise("ch", "alice", 1, 5, h, 100)
    b = Promise("ch", "alice", 1, 6, h, 100)
    assert a.signing_bytes != b.signing_bytes


def test_field_order_cannot_change_output():
    one = codec.canonical_encode(codec.TAG_PROMISE, {"a": 1, "b": 2, "c": "x"})
    two = codec.canonical_encode(codec.TAG_PROMISE, {"c": "x", "b": 2, "a": 1})
    assert one == two


def test_tag_prefixes_output():
    blob = PaymentProposal("p", 1, b"\x00" * 32, 10, "bob").canonical_bytes
    assert blob[:4] == codec.TAG_PROPOSAL


def test_unknown_tag_rejected():
    with pytest.raises(EncodingError):
        codec.canonical_encode(b"XXXX", {"a": 1})


def test_unsupported_value_rejected():
    with pytest.raises(EncodingError):
        codec.canonical_encode(codec.TAG_PROMISE, {"a": object()})


def test_decode_round_trip():
    fields = {"amount": 5, "hashlock": b"\x01" * 32, "name": "x"}
    blob = codec.canonical_encode(codec.TAG_SECRET, fields)
    tag, decoded = codec.canonical_decode(blob)
    assert tag == codec.TAG_SECRET
    assert decoded["amount"] == 5
    assert decoded["hashlock"] == "01" * 32


def test_decode_garbage_rejected():
    with pytest.raises(EncodingError):
        codec.canonical_decode(b"PR")
    with pytest.raises(EncodingError):
        codec.canonical_decode(codec.TAG_PROMISE + b"not json")
    with pytest.raises(EncodingError):
        codec.canonical_decode(codec.TAG_PROMISE + b"[1,2]")
