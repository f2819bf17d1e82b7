"""Group arithmetic, hashing, MACs, and signatures behind a pluggable backend.

The protocol needs four primitives:

* a pairing-friendly additive group G1 of prime order q with generator P and
  a bilinear map into a target group GT,
* a hash-to-group function H2 mapping byte strings into G1,
* an additive hash group G of prime order p with d public generators
  P1..Pd, giving the homomorphic hash H(m) = sum(m_i * Pi),
* a keyed MAC (HMAC-SHA256 truncated to 16 bytes).

All group operations route through a backend object so that a real pairing
curve can be plugged in without touching protocol code.  The shipped
backend, MockBackend, tracks exponents instead of curve points: a G1
element is the integer a standing for a*P, a GT element is the integer e
standing for pairing(P,P)**e, and pairing(a*P, b*P) is simply a*b mod q.
Every algebraic identity the protocol relies on holds exactly, which is
what the tests need, but discrete logs are trivial by construction —
the mock backend is test instrumentation, never a security mechanism.

Backend interface (duck-typed; see MockBackend for the reference):

    name                         short identifier string
    params                       GroupParams the backend was built from
    g1_identity/g1_generator     G1 constants
    g1_add/g1_neg/g1_mul         G1 group law and scalar multiplication
    g1_encode/g1_decode          canonical fixed-width encoding (g1_enc_len)
    gt_identity/gt_mul/gt_pow    GT group law (multiplicative notation)
    gt_encode/gt_decode          canonical encoding (gt_enc_len)
    pairing(a, b)                bilinear map G1 x G1 -> GT
    hash_to_g1(msg)              H2 : bytes -> G1
    hh_generators                list of d hash-group generators
    hh_identity/hh_add/hh_neg    hash-group law
    hh_mul(k, e)                 scalar multiplication in the hash group
    hh_hash(vec)                 homomorphic hash of a length-d int vector
    hh_encode/hh_decode          canonical encoding (hh_enc_len)

Element values are opaque to callers; only encode/decode and equality are
portable across backends.
"""

from __future__ import annotations

import hashlib
import hmac as _hmac
import struct
from dataclasses import dataclass, field

from .errors import (
    ConfigError,
    DecodeError,
    DimensionError,
    KeyError_,
    ParameterError,
)

# Default group orders, sized to match a 512-bit symmetric pairing curve
# (whose subgroup order is ~160 bits) and the secp160r1 field prime for the
# hash group.  Both are well-known primes.
DEFAULT_PAIRING_ORDER = 0x0100000000000000000001F4C8F927AED3CA752257
DEFAULT_HASH_GROUP_ORDER = 2**160 - 2**31 - 1

MAC_LEN = 16


def _is_probable_prime(n: int) -> bool:
    """Miller-Rabin with the first 20 prime witnesses (deterministic for
    every modulus this library will realistically see)."""
    if n < 2:
        return False
    small = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71]
    for sp in small:
        if n == sp:
            return True
        if n % sp == 0:
            return False
    d, r = n - 1, 0
    while d % 2 == 0:
        d //= 2
        r += 1
    for a in small:
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(r - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


def h1(*parts: bytes) -> bytes:
    """Plain 256-bit hash over length-prefixed parts.

    Length prefixes make the encoding injective, so h1(a, b) can never
    collide with h1(a || b) or any other arity.
    """
    h = hashlib.sha256()
    for part in parts:
        h.update(struct.pack(">I", len(part)))
        h.update(part)
    return h.digest()


def h1_int(*parts: bytes) -> int:
    return int.from_bytes(h1(*parts), "big")


@dataclass(frozen=True)
class GroupParams:
    """Public parameters: pairing group order q, hash group order p,
    hash dimension d, and opaque labels for the generators."""

    q: int = DEFAULT_PAIRING_ORDER
    p: int = DEFAULT_HASH_GROUP_ORDER
    d: int = 1
    generator_ids: tuple = ()

    def __post_init__(self):
        if self.d < 1:
            raise ConfigError(f"hash dimension must be >= 1, got {self.d}")
        if not _is_probable_prime(self.q):
            raise ConfigError("q must be prime")
        if not _is_probable_prime(self.p):
            raise ConfigError("p must be prime")
        if not self.generator_ids:
            ids = ("P",) + tuple(f"P{i}" for i in range(1, self.d + 1))
            object.__setattr__(self, "generator_ids", ids)
        elif len(self.generator_ids) != self.d + 1:
            raise ConfigError("need one generator id for P plus one per hash dimension")


class MockBackend:
    """Exponent-tracking reference backend (insecure by design).

    G1 elements are ints mod q (the multiple of P they stand for), GT
    elements are ints mod q (the exponent of pairing(P,P)), hash-group
    elements are ints mod p.  Encodings are fixed-width big-endian:
    64 bytes for G1/GT, 20 bytes for the hash group, matching the wire
    accounting used elsewhere.
    """

    name = "mock"
    g1_enc_len = 64
    gt_enc_len = 64
    hh_enc_len = 20

    def __init__(self, params: GroupParams | None = None):
        self.params = params or GroupParams()
        if self.params.p >= 1 << (8 * self.hh_enc_len):
            raise ConfigError("hash group order exceeds its encoding width")
        if self.params.q >= 1 << (8 * self.g1_enc_len):
            raise ConfigError("pairing group order exceeds its encoding width")
        self.hh_generators = self._derive_hh_generators()

    def _derive_hh_generators(self):
        """Derive d distinct nonzero hash-group generators from their labels."""
        p = self.params.p
        gens = []
        seen = set()
        for label in self.params.generator_ids[1:]:
            ctr = 0
            while True:
                g = h1_int(b"epic-hash-group-generator", label.encode(), struct.pack(">I", ctr)) % p
                if g != 0 and g not in seen:
                    break
                ctr += 1
            seen.add(g)
            gens.append(g)
        return gens

    # --- G1 -------------------------------------------------------------

    def g1_identity(self):
        return 0

    def g1_generator(self):
        return 1

    def g1_add(self, a, b):
        return (a + b) % self.params.q

    def g1_neg(self, a):
        return (-a) % self.params.q

    def g1_mul(self, k, a):
        return (k * a) % self.params.q

    def g1_encode(self, a) -> bytes:
        return int(a).to_bytes(self.g1_enc_len, "big")

    def g1_decode(self, raw: bytes):
        if len(raw) != self.g1_enc_len:
            raise DecodeError(f"G1 encoding must be {self.g1_enc_len} bytes, got {len(raw)}")
        val = int.from_bytes(raw, "big")
        if val >= self.params.q:
            raise DecodeError("G1 encoding out of range")
        return val

    def hash_to_g1(self, msg: bytes):
        # Maps msg to (h1(msg) mod q) * P.  Deterministic and collision
        # resistant, but not a hiding hash-to-curve: fine for the mock,
        # a real backend must supply a proper hash-to-point.
        return h1_int(msg) % self.params.q

    # --- GT (multiplicative notation, exponent representation) -----------

    def gt_identity(self):
        return 0

    def gt_mul(self, x, y):
        return (x + y) % self.params.q

    def gt_pow(self, x, k):
        return (x * k) % self.params.q

    def gt_encode(self, x) -> bytes:
        return int(x).to_bytes(self.gt_enc_len, "big")

    def gt_decode(self, raw: bytes):
        if len(raw) != self.gt_enc_len:
            raise DecodeError(f"GT encoding must be {self.gt_enc_len} bytes, got {len(raw)}")
        val = int.from_bytes(raw, "big")
        if val >= self.params.q:
            raise DecodeError("GT encoding out of range")
        return val

    def pairing(self, a, b):
        return (a * b) % self.params.q

    # --- hash group -------------------------------------------------------

    def hh_identity(self):
        return 0

    def hh_add(self, x, y):
        return (x + y) % self.params.p

    def hh_neg(self, x):
        return (-x) % self.params.p

    def hh_mul(self, k, x):
        return (k * x) % self.params.p

    def hh_hash(self, vec):
        if len(vec) != self.params.d:
            raise DimensionError(f"expected {self.params.d} components, got {len(vec)}")
        p = self.params.p
        acc = 0
        for m_i, g_i in zip(vec, self.hh_generators):
            acc = (acc + (m_i % p) * g_i) % p
        return acc

    def hh_encode(self, x) -> bytes:
        return int(x).to_bytes(self.hh_enc_len, "big")

    def hh_decode(self, raw: bytes):
        if len(raw) != self.hh_enc_len:
            raise DecodeError(f"hash-group encoding must be {self.hh_enc_len} bytes, got {len(raw)}")
        val = int.from_bytes(raw, "big")
        if val >= self.params.p:
            raise DecodeError("hash-group encoding out of range")
        return val


# Small parameters keep exhaustive tests fast; never use outside tests.
SMALL_TEST_PARAMS = GroupParams(q=(1 << 61) - 1, p=(1 << 31) - 1)

_BACKENDS = {
    "mock": lambda params=None: MockBackend(params),
    "mock-small": lambda params=None: MockBackend(params or SMALL_TEST_PARAMS),
}


def available_backends():
    return sorted(_BACKENDS)


def register_backend(name: str, factory):
    """Register a backend factory; a real pairing curve plugs in here."""
    _BACKENDS[name] = factory


def get_backend(name: str = "mock", params: GroupParams | None = None):
    try:
        factory = _BACKENDS[name]
    except KeyError:
        raise ConfigError(f"unknown backend {name!r}; available: {available_backends()}") from None
    return factory(params)


# --- scalars --------------------------------------------------------------


def rand_scalar(rng, modulus: int) -> int:
    """Uniform nonzero scalar in [1, modulus)."""
    return rng.randrange(1, modulus)


# --- keyed MAC -------------------------------------------------------------


def hmac_tag(key: bytes, msg: bytes) -> bytes:
    """16-byte MAC: leftmost half of HMAC-SHA256(key, msg)."""
    if not key:
        raise ConfigError("MAC key must be nonempty")
    return _hmac.new(key, msg, hashlib.sha256).digest()[:MAC_LEN]


def hmac_scalar(key: bytes, msg: bytes, modulus: int) -> int:
    """Full HMAC-SHA256 output reduced mod `modulus` (mask derivation)."""
    if not key:
        raise ConfigError("MAC key must be nonempty")
    digest = _hmac.new(key, msg, hashlib.sha256).digest()
    return int.from_bytes(digest, "big") % modulus


# --- signatures -------------------------------------------------------------


def keygen(backend, rng):
    """Fresh signing keypair: private x in [1,q), public Y = x*P."""
    x = rand_scalar(rng, backend.params.q)
    return x, backend.g1_mul(x, backend.g1_generator())


def bls_sign(backend, x: int, msg: bytes):
    """Short signature sigma = x * H2(msg)."""
    if x % backend.params.q == 0:
        raise KeyError_("private key must be nonzero mod q")
    return backend.g1_mul(x, backend.hash_to_g1(msg))


def bls_verify(backend, pubkey, msg: bytes, sigma) -> bool:
    """Accept iff pairing(sigma, P) == pairing(H2(msg), Y)."""
    lhs = backend.pairing(sigma, backend.g1_generator())
    rhs = backend.pairing(backend.hash_to_g1(msg), pubkey)
    return lhs == rhs


def bls_batch_verify(backend, items) -> bool:
    """Batch check: pairing(sum sigma_i, P) == prod pairing(H2(m_i), Y_i).

    `items` is a sequence of (pubkey, msg, sigma).  A passing batch is
    implied by all individual checks passing; a failing batch means at
    least one individual check fails (bisect to locate it).
    """
    items = list(items)
    if not items:
        raise ParameterError("batch verification needs a nonempty list")
    sig_sum = backend.g1_identity()
    rhs = backend.gt_identity()
    for pubkey, msg, sigma in items:
        sig_sum = backend.g1_add(sig_sum, sigma)
        rhs = backend.gt_mul(rhs, backend.pairing(backend.hash_to_g1(msg), pubkey))
    lhs = backend.pairing(sig_sum, backend.g1_generator())
    return lhs == rhs


# --- certificates ------------------------------------------------------------


@dataclass(frozen=True)
class Certificate:
    """Identity record (node_id, pubkey) signed by the trusted authority."""

    node_id: int
    pubkey: object
    authority_sig: object

    def signed_body(self, backend) -> bytes:
        return cert_body(backend, self.node_id, self.pubkey)


def cert_body(backend, node_id: int, pubkey) -> bytes:
    return h1(b"epic-cert-v1", struct.pack(">I", node_id), backend.g1_encode(pubkey))


@dataclass
class TrustedAuthority:
    """Offline authority that bootstraps certificates for simulated nodes."""

    backend: object
    private: int = field(repr=False, default=0)
    public: object = None

    @classmethod
    def create(cls, backend, rng):
        x, y = keygen(backend, rng)
        return cls(backend=backend, private=x, public=y)

    def issue(self, node_id: int, pubkey) -> Certificate:
        sig = bls_sign(self.backend, self.private, cert_body(self.backend, node_id, pubkey))
        return Certificate(node_id=node_id, pubkey=pubkey, authority_sig=sig)


def verify_certificate(backend, authority_pub, cert: Certificate) -> bool:
    body = cert_body(backend, cert.node_id, cert.pubkey)
    return bls_verify(backend, authority_pub, body, cert.authority_sig)
