"""Compat wire layouts and byte accounting.

Fixed-width big-endian field layouts for the report and key-establishment
packets.  These encodings drive all byte accounting (message sizes, simulator
segmentation, throughput), and their widths are the published ones:

    report         = masked reading (16) | TS (4) | hashes (20 each)
                     | MAC (16) | signature (64)
    KEReq          = id (4) | element (64) | TS (4) | sig (64) | cert (132)
    KERes          = id (4) | element (64) | TS (4) | digest (32) | sig (64)
                     | cert (132)
    certificate    = id (4) | pubkey (64) | authority sig (64)

A leaf report therefore weighs 16+4+20+16+64 = 120 bytes and an aggregate
carrying l hashes weighs 20*l + 100 bytes.

One deliberate asymmetry: masked readings live in Z_p with p a 160-bit
prime, but the published packet format allots them 16 bytes.  The field
carries the low 128 bits; in-memory values keep full precision and
signatures bind the full-width encoding.  The 16-byte field is size
accounting, not a lossless transport (the simulator moves report objects
and only charges their serialized size to the channel).
"""

from __future__ import annotations

import struct

from .crypto import MAC_LEN
from .errors import DecodeError

MASKED_READING_LEN = 16
TS_LEN = 4
ID_LEN = 4
DIGEST_LEN = 32


def encode_u32(v: int) -> bytes:
    return struct.pack(">I", v)


def encode_u16(v: int) -> bytes:
    return struct.pack(">H", v)


def encode_masked_reading(value: int) -> bytes:
    """16-byte reading field (low 128 bits of the masked value)."""
    return (value % (1 << (8 * MASKED_READING_LEN))).to_bytes(MASKED_READING_LEN, "big")


def encode_scalar_full(backend, value: int) -> bytes:
    """Full-width mod-p scalar encoding (used inside signed bodies)."""
    return int(value % backend.params.p).to_bytes(backend.hh_enc_len, "big")


def _check_mac(mac: bytes):
    if len(mac) != MAC_LEN:
        raise DecodeError(f"MAC must be {MAC_LEN} bytes, got {len(mac)}")


def encode_report(backend, value: int, ts: int, hash_values, mac: bytes, sigma) -> bytes:
    """Serialize a report tuple (value, TS, h_1..h_l, MAC, sigma)."""
    _check_mac(mac)
    out = [encode_masked_reading(value), encode_u32(ts)]
    out.extend(backend.hh_encode(h) for h in hash_values)
    out.append(mac)
    out.append(backend.g1_encode(sigma))
    return b"".join(out)


def report_size(backend, n_hashes: int) -> int:
    """Report size in bytes, measured off the serializer."""
    dummy = encode_report(
        backend,
        0,
        0,
        [backend.hh_identity()] * n_hashes,
        b"\x00" * MAC_LEN,
        backend.g1_identity(),
    )
    return len(dummy)


def encode_certificate(backend, cert) -> bytes:
    return (
        encode_u32(cert.node_id)
        + backend.g1_encode(cert.pubkey)
        + backend.g1_encode(cert.authority_sig)
    )


def encode_ke_req(backend, sender: int, v_pub, ts: int, sigma, cert) -> bytes:
    return (
        encode_u32(sender)
        + backend.g1_encode(v_pub)
        + encode_u32(ts)
        + backend.g1_encode(sigma)
        + encode_certificate(backend, cert)
    )


def encode_ke_res(backend, sender: int, v_pub, ts: int, digest: bytes, sigma, cert) -> bytes:
    if len(digest) != DIGEST_LEN:
        raise DecodeError(f"confirmation digest must be {DIGEST_LEN} bytes")
    return (
        encode_u32(sender)
        + backend.g1_encode(v_pub)
        + encode_u32(ts)
        + digest
        + backend.g1_encode(sigma)
        + encode_certificate(backend, cert)
    )


def encode_ke_conf(backend, sender: int, peer: int, ts: int, digest: bytes, sigma) -> bytes:
    if len(digest) != DIGEST_LEN:
        raise DecodeError(f"confirmation digest must be {DIGEST_LEN} bytes")
    return (
        encode_u32(sender)
        + encode_u32(peer)
        + encode_u32(ts)
        + digest
        + backend.g1_encode(sigma)
    )
