"""Proxy selection, key agreement, short-term key chains, and mask derivation.

Privacy rests on pairwise one-time masks.  Every meter picks a set of
proxies; for each (owner, proxy) pair both sides derive the same per-slot
mask value.  The owner subtracts the mask from its reading, the proxy adds
it to its own, so summing every participant's contribution cancels all
pairwise masks and leaves the plain total.

Key material flows in three stages:

1. a long-term seed key per pair, agreed through a signed three-message
   exchange (KEReq / KERes / KConf) contributing randomness from both sides
   (K = v_ij * v_ji * P, a Diffie-Hellman style element of G1);
2. per-day short-term keys, derived from the seed key through a forward and
   a backward hash chain XORed position-wise (compromise of one slot key
   reveals neither earlier nor later keys);
3. per-slot mask scalars, HMAC outputs keyed by the slot's short-term key
   over (owner pubkey, proxy pubkey, day, slot), reduced mod p.

The last slot of every billing period swaps the regular net mask for a
closing mask that collapses the period to a single meter-utility billing
mask; see the billing module for the period bookkeeping.
"""

from __future__ import annotations

import random
import struct
from dataclasses import dataclass, field

from . import wire
from .crypto import (
    Certificate,
    bls_sign,
    bls_verify,
    h1,
    hmac_scalar,
    rand_scalar,
    verify_certificate,
)
from .errors import (
    AuthFailed,
    InsufficientCandidates,
    KeyConfirmationFailed,
    KeyNotProvisioned,
    MaskReuseError,
    ParameterError,
    ReplayRejected,
    SequencingError,
)

DEFAULT_FRESHNESS_WINDOW_S = 5
DEFAULT_KEY_ROLLOVER_DAYS = 30


# --- proxy selection ---------------------------------------------------------


@dataclass
class ProxyAssignment:
    """One node's proxy relations: `proxies` it selected (it subtracts those
    masks), `selected_by` nodes that picked it (it adds those masks)."""

    owner: int
    proxies: tuple = ()
    selected_by: tuple = ()

    @property
    def lam(self) -> int:
        return len(self.proxies) + len(self.selected_by)


def select_proxies(node: int, candidates, count: int, seed) -> tuple:
    """Uniform sample of `count` distinct proxies, deterministic per seed."""
    pool = sorted(c for c in candidates if c != node)
    if count > len(pool):
        raise InsufficientCandidates(
            f"node {node}: need {count} proxies but only {len(pool)} candidates"
        )
    if count < 0:
        raise ParameterError("proxy count must be >= 0")
    rng = seed if isinstance(seed, random.Random) else random.Random(seed)
    return tuple(sorted(rng.sample(pool, count)))


def build_proxy_assignments(selectors, candidates, counts, seed) -> dict:
    """Run proxy selection for every node in `selectors` and return the
    globally consistent ProxyAssignment map (j in proxies(i) iff
    i in selected_by(j)).  `counts` maps node id -> how many it selects."""
    rng = seed if isinstance(seed, random.Random) else random.Random(seed)
    chosen = {}
    for node in sorted(selectors):
        chosen[node] = select_proxies(node, candidates, counts[node], rng)
    everyone = sorted(set(candidates) | set(selectors))
    selected_by = {node: [] for node in everyone}
    for owner, proxies in chosen.items():
        for p in proxies:
            selected_by[p].append(owner)
    return {
        node: ProxyAssignment(
            owner=node,
            proxies=chosen.get(node, ()),
            selected_by=tuple(sorted(selected_by[node])),
        )
        for node in everyone
    }


# --- long-term key agreement -------------------------------------------------


@dataclass(frozen=True)
class NodeIdentity:
    node_id: int
    private: int = field(repr=False)
    public: object
    cert: Certificate


@dataclass(frozen=True)
class KEReq:
    sender: int
    v_pub: object
    ts: int
    sigma: object
    cert: Certificate

    def encode(self, backend) -> bytes:
        return wire.encode_ke_req(backend, self.sender, self.v_pub, self.ts, self.sigma, self.cert)


@dataclass(frozen=True)
class KERes:
    sender: int
    v_pub: object
    ts: int
    confirm_digest: bytes
    sigma: object
    cert: Certificate

    def encode(self, backend) -> bytes:
        return wire.encode_ke_res(
            backend, self.sender, self.v_pub, self.ts, self.confirm_digest, self.sigma, self.cert
        )


@dataclass(frozen=True)
class KConf:
    sender: int
    peer: int
    ts: int
    confirm_digest: bytes
    sigma: object

    def encode(self, backend) -> bytes:
        return wire.encode_ke_conf(
            backend, self.sender, self.peer, self.ts, self.confirm_digest, self.sigma
        )


@dataclass(frozen=True)
class LongTermSeedKey:
    """Shared pair key K = v_ij * v_ji * P; both endpoints derive the same
    element.  `key_bytes` is the canonical encoding used to key hashes."""

    element: object
    key_bytes: bytes
    epoch: int = 0


def _req_body(backend, sender: int, v_pub, ts: int) -> bytes:
    return b"epic-kereq-v1" + wire.encode_u32(sender) + backend.g1_encode(v_pub) + wire.encode_u32(ts)


def _res_body(backend, sender: int, v_pub, ts: int, digest: bytes) -> bytes:
    return (
        b"epic-keres-v1"
        + wire.encode_u32(sender)
        + backend.g1_encode(v_pub)
        + wire.encode_u32(ts)
        + digest
    )


def _conf_body(backend, sender: int, peer: int, ts: int, digest: bytes) -> bytes:
    return (
        b"epic-keconf-v1"
        + wire.encode_u32(sender)
        + wire.encode_u32(peer)
        + wire.encode_u32(ts)
        + digest
    )


def _confirm_digest(key_bytes: bytes, stage: int) -> bytes:
    return h1(key_bytes, bytes([stage]))


def _check_fresh(ts: int, now: int, delta: int):
    if abs(now - ts) > delta:
        raise ReplayRejected(f"timestamp {ts} outside freshness window of {now} +/- {delta}")


def _check_packet(backend, authority_pub, cert: Certificate, sender: int, body: bytes, sigma):
    if cert.node_id != sender:
        raise AuthFailed(f"certificate subject {cert.node_id} does not match sender {sender}")
    if not verify_certificate(backend, authority_pub, cert):
        raise AuthFailed(f"certificate of node {sender} failed verification")
    if not bls_verify(backend, cert.pubkey, body, sigma):
        raise AuthFailed(f"packet signature of node {sender} failed verification")


def ke_initiate(backend, identity: NodeIdentity, peer_id: int, now: int, rng):
    """Start key establishment toward `peer_id`.  Returns the request packet
    and the private exchange state needed by ke_finalize."""
    v = rand_scalar(rng, backend.params.q)
    v_pub = backend.g1_mul(v, backend.g1_generator())
    sigma = bls_sign(backend, identity.private, _req_body(backend, identity.node_id, v_pub, now))
    req = KEReq(sender=identity.node_id, v_pub=v_pub, ts=now, sigma=sigma, cert=identity.cert)
    return req, v


def ke_respond(
    backend,
    identity: NodeIdentity,
    req: KEReq,
    now: int,
    rng,
    authority_pub,
    delta: int = DEFAULT_FRESHNESS_WINDOW_S,
):
    """Verify a request, contribute our own randomness, and derive the key."""
    _check_fresh(req.ts, now, delta)
    _check_packet(
        backend,
        authority_pub,
        req.cert,
        req.sender,
        _req_body(backend, req.sender, req.v_pub, req.ts),
        req.sigma,
    )
    v = rand_scalar(rng, backend.params.q)
    v_pub = backend.g1_mul(v, backend.g1_generator())
    element = backend.g1_mul(v, req.v_pub)
    key = LongTermSeedKey(element=element, key_bytes=backend.g1_encode(element))
    digest = _confirm_digest(key.key_bytes, 1)
    sigma = bls_sign(
        backend, identity.private, _res_body(backend, identity.node_id, v_pub, now, digest)
    )
    res = KERes(
        sender=identity.node_id,
        v_pub=v_pub,
        ts=now,
        confirm_digest=digest,
        sigma=sigma,
        cert=identity.cert,
    )
    return res, key


def ke_finalize(
    backend,
    identity: NodeIdentity,
    exchange_state: int,
    res: KERes,
    now: int,
    authority_pub,
    delta: int = DEFAULT_FRESHNESS_WINDOW_S,
):
    """Verify the response, derive the key, and check the confirmation digest
    before emitting KConf."""
    _check_fresh(res.ts, now, delta)
    _check_packet(
        backend,
        authority_pub,
        res.cert,
        res.sender,
        _res_body(backend, res.sender, res.v_pub, res.ts, res.confirm_digest),
        res.sigma,
    )
    element = backend.g1_mul(exchange_state, res.v_pub)
    key = LongTermSeedKey(element=element, key_bytes=backend.g1_encode(element))
    if _confirm_digest(key.key_bytes, 1) != res.confirm_digest:
        raise KeyConfirmationFailed(
            f"responder {res.sender} confirmed a different key than we derived"
        )
    digest = _confirm_digest(key.key_bytes, 2)
    sigma = bls_sign(
        backend,
        identity.private,
        _conf_body(backend, identity.node_id, res.sender, now, digest),
    )
    conf = KConf(
        sender=identity.node_id, peer=res.sender, ts=now, confirm_digest=digest, sigma=sigma
    )
    return conf, key


def ke_accept_confirmation(
    backend,
    key: LongTermSeedKey,
    conf: KConf,
    initiator_pub,
    now: int,
    delta: int = DEFAULT_FRESHNESS_WINDOW_S,
):
    """Responder-side check that the initiator derived the same key."""
    _check_fresh(conf.ts, now, delta)
    body = _conf_body(backend, conf.sender, conf.peer, conf.ts, conf.confirm_digest)
    if not bls_verify(backend, initiator_pub, body, conf.sigma):
        raise AuthFailed(f"key confirmation signature of node {conf.sender} is invalid")
    if conf.confirm_digest != _confirm_digest(key.key_bytes, 2):
        raise KeyConfirmationFailed("initiator confirmed a different key than we hold")


# --- short-term key chains ---------------------------------------------------


@dataclass(frozen=True)
class KeyChainEpoch:
    """Forward/backward hash chains of length T and the derived slot keys.

    forward[0] = H1(K, TS, 1), forward[a] = H1(forward[a-1]);
    backward[T-1] = H1(K, TS, 2), backward[b] = H1(backward[b+1]);
    key t = H1(forward[t] XOR backward[t]).
    """

    ts: int
    length: int
    forward: tuple
    backward: tuple
    keys: tuple

    def key_for_slot(self, t_x: int) -> bytes:
        if not 0 <= t_x < self.length:
            raise KeyNotProvisioned(f"slot {t_x} outside chain epoch of length {self.length}")
        return self.keys[t_x]


def derive_chains(key: LongTermSeedKey, ts: int, length: int) -> KeyChainEpoch:
    if length < 1:
        raise ParameterError("chain length must be >= 1")
    ts_bytes = struct.pack(">I", ts)
    forward = [h1(key.key_bytes, ts_bytes, b"\x01")]
    for _ in range(1, length):
        forward.append(h1(forward[-1]))
    backward = [h1(key.key_bytes, ts_bytes, b"\x02")]
    for _ in range(1, length):
        backward.append(h1(backward[-1]))
    backward.reverse()
    keys = tuple(
        h1(bytes(f ^ b for f, b in zip(fw, bw))) for fw, bw in zip(forward, backward)
    )
    return KeyChainEpoch(
        ts=ts, length=length, forward=tuple(forward), backward=tuple(backward), keys=keys
    )


# --- masks -------------------------------------------------------------------


def mask_message(backend, owner_pub, proxy_pub, day: int, t_x: int) -> bytes:
    """HMAC input for a pairwise mask: encode(Y_owner) || encode(Y_proxy)
    || day:u32 || slot:u16, big-endian."""
    return (
        backend.g1_encode(owner_pub)
        + backend.g1_encode(proxy_pub)
        + struct.pack(">I", day)
        + struct.pack(">H", t_x)
    )


@dataclass
class PeerKey:
    """Shared key state with one peer (seed key plus cached chain epochs)."""

    peer_id: int
    peer_pub: object
    seed_key: LongTermSeedKey
    _epochs: dict = field(default_factory=dict, repr=False)

    def epoch(self, day: int, slots_per_day: int) -> KeyChainEpoch:
        ep = self._epochs.get(day)
        if ep is None:
            ep = derive_chains(self.seed_key, day, slots_per_day)
            self._epochs[day] = ep
        return ep


class NodeMaskManager:
    """Per-node mask derivation, net-mask computation, and one-time use
    enforcement.

    A mask relation is directed: the owner (who selected the proxy)
    subtracts the mask, the proxy adds it.  Both directions may exist for
    the same peer pair; they share one seed key but their mask values
    differ because the HMAC input orders (owner, proxy).

    `billing_schedule` (any object with `period_of(day, t_x)` returning a
    record with `.index`, `.start_slot`, `.closing_slot`, `.is_closing(t_x)`)
    switches the closing slot of each period to the closing mask; meters
    pass a `billing_mask_fn(period_index) -> int`, infrastructure nodes
    (gateway, utility) pass None and close with the bare negative running
    sum.
    """

    def __init__(self, backend, node_id: int, public, slots_per_day: int,
                 billing_schedule=None, billing_mask_fn=None):
        self.backend = backend
        self.node_id = node_id
        self.public = public
        self.slots_per_day = slots_per_day
        self.billing_schedule = billing_schedule
        self.billing_mask_fn = billing_mask_fn
        self._peers: dict[int, PeerKey] = {}
        self.owned: set[int] = set()        # proxies this node selected
        self.proxied_for: set[int] = set()  # owners that selected this node
        self._consumed = set()

    @property
    def lam(self) -> int:
        return len(self.owned) + len(self.proxied_for)

    def register_peer(self, peer_id: int, peer_pub, seed_key: LongTermSeedKey):
        self._peers[peer_id] = PeerKey(peer_id=peer_id, peer_pub=peer_pub, seed_key=seed_key)

    def add_owned_relation(self, proxy_id: int):
        if proxy_id not in self._peers:
            raise KeyNotProvisioned(f"node {self.node_id} has no key with proxy {proxy_id}")
        self.owned.add(proxy_id)

    def add_proxy_relation(self, owner_id: int):
        if owner_id not in self._peers:
            raise KeyNotProvisioned(f"node {self.node_id} has no key with owner {owner_id}")
        self.proxied_for.add(owner_id)

    def peer_key(self, peer_id: int) -> PeerKey:
        peer = self._peers.get(peer_id)
        if peer is None:
            raise KeyNotProvisioned(f"node {self.node_id} shares no key with {peer_id}")
        return peer

    def pair_mask(self, owner_id: int, proxy_id: int, day: int, t_x: int) -> int:
        """Mask scalar for the directed relation owner -> proxy at (day, slot).
        This node must be one endpoint."""
        peer_id = proxy_id if owner_id == self.node_id else owner_id
        peer = self.peer_key(peer_id)
        if not 0 <= t_x < self.slots_per_day:
            raise KeyNotProvisioned(f"slot {t_x} outside the daily schedule")
        key = peer.epoch(day, self.slots_per_day).key_for_slot(t_x)
        own_first = owner_id == self.node_id
        owner_pub = self.public if own_first else peer.peer_pub
        proxy_pub = peer.peer_pub if own_first else self.public
        msg = mask_message(self.backend, owner_pub, proxy_pub, day, t_x)
        return hmac_scalar(key, msg, self.backend.params.p)

    def plain_net_mask(self, day: int, t_x: int) -> int:
        """Net mask ignoring billing closure: sum of masks where this node
        is the proxy minus sum where it is the owner, mod p."""
        p = self.backend.params.p
        acc = 0
        for owner_id in self.proxied_for:
            acc += self.pair_mask(owner_id, self.node_id, day, t_x)
        for proxy_id in self.owned:
            acc -= self.pair_mask(self.node_id, proxy_id, day, t_x)
        return acc % p

    def net_mask(self, day: int, t_x: int) -> int:
        """Net mask for (day, slot); on a period's closing slot this is the
        closing mask (billing mask minus the running sum of the period's
        prior net masks) instead of the regular slot mask."""
        if self.billing_schedule is None:
            return self.plain_net_mask(day, t_x)
        ref = self.billing_schedule.period_of(day, t_x)
        if not ref.is_closing(t_x):
            return self.plain_net_mask(day, t_x)
        return self.closing_mask(day, ref)

    def closing_mask(self, day: int, period_ref) -> int:
        p = self.backend.params.p
        running = 0
        for slot in range(period_ref.start_slot, period_ref.closing_slot):
            running = (running + self.plain_net_mask(day, slot)) % p
        base = self.billing_mask_fn(period_ref.index) if self.billing_mask_fn else 0
        return (base - running) % p

    def consume_net_mask(self, day: int, t_x: int) -> int:
        """net_mask with one-time enforcement; a second consumption of the
        same (day, slot) raises MaskReuseError."""
        if (day, t_x) in self._consumed:
            raise MaskReuseError(
                f"node {self.node_id} already consumed its masks for day {day} slot {t_x}"
            )
        if self.billing_schedule is not None:
            ref = self.billing_schedule.period_of(day, t_x)
            if ref.is_closing(t_x):
                missing = [
                    s
                    for s in range(ref.start_slot, ref.closing_slot)
                    if (day, s) not in self._consumed
                ]
                if missing:
                    raise SequencingError(
                        f"closing slot {t_x} consumed before slots {missing} of its period"
                    )
        value = self.net_mask(day, t_x)
        self._consumed.add((day, t_x))
        return value
