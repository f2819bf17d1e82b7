"""Wire layout tests: field widths and sizes measured off the serializer."""

import pytest

from epic import wire
from epic.crypto import TrustedAuthority, keygen
from epic.errors import DecodeError


def test_report_field_widths(backend):
    h = backend.hh_hash([123])
    blob = wire.encode_report(backend, 7, 9, [h], b"\x11" * 16, backend.g1_generator())
    assert len(blob) == 16 + 4 + 20 + 16 + 64
    # field order: value, TS, hashes, MAC, signature
    assert blob[:16] == (7).to_bytes(16, "big")
    assert blob[16:20] == (9).to_bytes(4, "big")
    assert blob[20:40] == backend.hh_encode(h)
    assert blob[40:56] == b"\x11" * 16
    assert blob[56:] == backend.g1_encode(backend.g1_generator())


def test_leaf_report_is_120_bytes(backend):
    assert wire.report_size(backend, 1) == 120


def test_aggregate_report_size_formula(backend):
    for n in (1, 2, 17, 200):
        assert wire.report_size(backend, n) == 20 * n + 100


def test_masked_reading_field_is_16_bytes_low_bits():
    value = (1 << 140) + 12345
    enc = wire.encode_masked_reading(value)
    assert len(enc) == 16
    assert int.from_bytes(enc, "big") == value % (1 << 128)


def test_ke_packet_sizes(backend, rng):
    ta = TrustedAuthority.create(backend, rng)
    x, y = keygen(backend, rng)
    cert = ta.issue(5, y)
    assert len(wire.encode_certificate(backend, cert)) == 4 + 64 + 64
    v = backend.g1_mul(99, backend.g1_generator())
    sig = backend.g1_generator()
    req = wire.encode_ke_req(backend, 5, v, 1, sig, cert)
    assert len(req) == 4 + 64 + 4 + 64 + 132
    res = wire.encode_ke_res(backend, 6, v, 1, b"\x00" * 32, sig, cert)
    assert len(res) == 4 + 64 + 4 + 32 + 64 + 132
    conf = wire.encode_ke_conf(backend, 5, 6, 1, b"\x00" * 32, sig)
    assert len(conf) == 4 + 4 + 4 + 32 + 64


def test_bad_mac_length_rejected(backend):
    with pytest.raises(DecodeError):
        wire.encode_report(backend, 0, 0, [], b"\x00" * 15, backend.g1_identity())
