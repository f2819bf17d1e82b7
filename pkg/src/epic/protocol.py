"""Per-round protocol state machines.

A collection round walks reports up a tree rooted at the gateway:

* leaves mask their reading, hash it, MAC the hash under their
  utility-shared key, and sign (masked value, MAC, TS);
* every non-leaf first verifies its children — batch signature check, then
  batch hash check H(sum of child values) == sum of child hash lists, with
  divide-and-conquer isolation of any inconsistent report — and then folds
  in its own masked reading, concatenates hash lists, XORs MACs, and signs;
* the gateway does the same minus a reading of its own (it contributes its
  net mask only, and nothing at all when it holds no mask relations);
* the utility checks the gateway signature, the hash batch, and the
  XOR-folded MAC recomputed from the individual hashes, then strips its own
  masks (and, on a period's closing slot, all billing masks) to obtain the
  plain sum of readings.

When the utility's MAC check fails it walks the tree bottom-up, pulling
stored evidence from each non-leaf node and its parent, and pins the first
node whose children signatures (or reconstructed own MAC) do not add up.

Verification helpers are pure; all mutable state lives in the per-node
mask managers and the evidence stores a round produces.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import wire
from .crypto import bls_sign, bls_verify, bls_batch_verify, hmac_tag
from .errors import (
    AttackDetected,
    AuthFailed,
    ConsistencyError,
    InconsistentEvidence,
    ParameterError,
    ReplayRejected,
    TopologyError,
)

DEFAULT_READING_MAX = 10_000
XOR_IDENTITY = b"\x00" * 16


def xor_bytes(a: bytes, b: bytes) -> bytes:
    return bytes(x ^ y for x, y in zip(a, b))


# --- topology ----------------------------------------------------------------


class Tree:
    """Aggregation tree: gateway root, meters below, children ordered by id."""

    def __init__(self, gateway: int, parent: dict):
        self.gateway = gateway
        self.parent = dict(parent)
        if gateway in self.parent:
            raise TopologyError("gateway cannot have a parent")
        self.children = {gateway: []}
        for node in self.parent:
            self.children.setdefault(node, [])
        for node, par in sorted(self.parent.items()):
            if par not in self.children:
                raise TopologyError(f"parent {par} of {node} is not in the tree")
            self.children[par].append(node)
        for par in self.children:
            self.children[par].sort()
        self.depth = {gateway: 0}
        frontier = [gateway]
        while frontier:
            nxt = []
            for node in frontier:
                for child in self.children[node]:
                    self.depth[child] = self.depth[node] + 1
                    nxt.append(child)
            frontier = nxt
        if len(self.depth) != len(self.parent) + 1:
            raise TopologyError("tree contains nodes unreachable from the gateway")

    @property
    def meters(self) -> list:
        return sorted(self.parent)

    def subtree_meters(self, node: int) -> list:
        """Canonical subtree enumeration: the node itself (if a meter), then
        each child's subtree depth-first, children ordered by id."""
        out = [node] if node != self.gateway else []
        for child in self.children[node]:
            out.extend(self.subtree_meters(child))
        return out

    def nonleaf_nodes_bottom_up(self) -> list:
        """Non-leaf nodes (gateway included) deepest first, ties by id."""
        nonleaf = [n for n, ch in self.children.items() if ch]
        return sorted(nonleaf, key=lambda n: (-self.depth[n], n))


# --- reports -----------------------------------------------------------------


@dataclass(frozen=True)
class Report:
    """Wire unit for both leaves and aggregators (a leaf carries one hash).

    `hash_entries` pairs each homomorphic hash with the meter that produced
    it, in canonical subtree order; only the hashes travel on the wire, the
    ids are implied by the topology.
    """

    sender: int
    value: int          # masked reading, or aggregated masked sum, mod p
    ts: int
    hash_entries: tuple  # ((meter_id, hash_element), ...)
    mac: bytes
    sigma: object

    @property
    def subtree_size(self) -> int:
        return len(self.hash_entries)

    def evidence_tuple(self) -> tuple:
        return (self.value, self.mac, self.sigma)

    def encode(self, backend) -> bytes:
        return wire.encode_report(
            backend,
            self.value,
            self.ts,
            [h for _, h in self.hash_entries],
            self.mac,
            self.sigma,
        )


def report_signed_body(backend, value: int, mac: bytes, ts: int) -> bytes:
    """Byte string the sender signs: full-width value, MAC, timestamp."""
    return b"epic-report-v1" + wire.encode_scalar_full(backend, value) + mac + wire.encode_u32(ts)


@dataclass(frozen=True)
class RoundContext:
    day: int
    t_x: int
    ts: int
    r_max: int = DEFAULT_READING_MAX
    freshness_s: int = 5


# --- leaf and non-leaf report generation --------------------------------------


def leaf_generate(system, meter_id: int, reading: int, ctx: RoundContext) -> Report:
    """Build a leaf report: m = (r + net mask) mod p, h = H(m),
    mac = HMAC_{K_mu}(h), signature over (m, mac, TS)."""
    if not 0 <= reading <= ctx.r_max:
        raise ParameterError(f"reading {reading} outside [0, {ctx.r_max}]")
    backend = system.backend
    node = system.nodes[meter_id]
    mask = node.masks.consume_net_mask(ctx.day, ctx.t_x)
    masked = (reading + mask) % backend.params.p
    h = backend.hh_hash([masked] + [0] * (backend.params.d - 1))
    mac = hmac_tag(node.mac_key, backend.hh_encode(h))
    sigma = bls_sign(backend, node.identity.private,
                     report_signed_body(backend, masked, mac, ctx.ts))
    return Report(
        sender=meter_id,
        value=masked,
        ts=ctx.ts,
        hash_entries=((meter_id, h),),
        mac=mac,
        sigma=sigma,
    )


@dataclass
class RejectedReport:
    """A child report excluded during phase 1 and why.

    `accused` marks rejections that positively identify their sender as the
    attacker (hash inconsistency is only producible by the signer of the
    report); signature and timestamp failures drop the report without
    accusation since in-flight corruption looks identical.
    """

    sender: int
    reason: str  # "replay" | "signature" | "hash"

    @property
    def accused(self) -> bool:
        return self.reason == "hash"


@dataclass
class Phase1Result:
    verified: list
    rejected: list  # RejectedReport

    @property
    def culprits(self) -> list:
        return [r.sender for r in self.rejected if r.accused]


def _hash_list_sum(backend, reports) -> object:
    acc = backend.hh_identity()
    for rep in reports:
        for _, h in rep.hash_entries:
            acc = backend.hh_add(acc, h)
    return acc


def _value_sum(backend, reports) -> int:
    return sum(rep.value for rep in reports) % backend.params.p


def _hash_batch_ok(backend, reports) -> bool:
    """Batch hash check: H(sum of values) == sum of carried hashes."""
    total = _value_sum(backend, reports)
    expected = backend.hh_hash([total] + [0] * (backend.params.d - 1))
    return expected == _hash_list_sum(backend, reports)


def _isolate(backend, reports, check) -> list:
    """Divide and conquer: recursively re-check halves until the offending
    reports are isolated.  `check(subset) -> bool`."""
    if check(reports):
        return []
    if len(reports) == 1:
        return [reports[0]]
    mid = len(reports) // 2
    return _isolate(backend, reports[:mid], check) + _isolate(backend, reports[mid:], check)


def nonleaf_phase1(system, node_id: int, child_reports, ctx: RoundContext,
                   evidence_store=None) -> Phase1Result:
    """Verify children: timestamps, batch signatures, batch hashes.  Verified
    tuples are stored as evidence for later attacker identification."""
    if not child_reports:
        raise ParameterError("phase 1 needs at least one child report")
    backend = system.backend
    rejected = []

    fresh = []
    for rep in child_reports:
        if abs(rep.ts - ctx.ts) > ctx.freshness_s:
            rejected.append(RejectedReport(sender=rep.sender, reason="replay"))
        else:
            fresh.append(rep)

    def sig_items(reps):
        return [
            (system.nodes[r.sender].identity.public,
             report_signed_body(backend, r.value, r.mac, r.ts),
             r.sigma)
            for r in reps
        ]

    sig_ok = fresh
    if fresh and not bls_batch_verify(backend, sig_items(fresh)):
        bad = _isolate(backend, fresh, lambda subset: bls_batch_verify(backend, sig_items(subset)))
        for rep in bad:
            rejected.append(RejectedReport(sender=rep.sender, reason="signature"))
        sig_ok = [r for r in fresh if r not in bad]

    verified = sig_ok
    if sig_ok and not _hash_batch_ok(backend, sig_ok):
        bad = _isolate(backend, sig_ok, lambda subset: _hash_batch_ok(backend, subset))
        for rep in bad:
            rejected.append(RejectedReport(sender=rep.sender, reason="hash"))
        verified = [r for r in sig_ok if r not in bad]

    if evidence_store is not None:
        evidence_store.record(node_id, verified)
    return Phase1Result(verified=verified, rejected=rejected)


def _aggregate(system, node_id: int, own_masked, own_entries, own_mac,
               verified_reports, ctx: RoundContext) -> Report:
    backend = system.backend
    value = own_masked
    mac = own_mac
    entries = list(own_entries)
    for rep in sorted(verified_reports, key=lambda r: r.sender):
        value = (value + rep.value) % backend.params.p
        mac = xor_bytes(mac, rep.mac)
        entries.extend(rep.hash_entries)
    sigma = bls_sign(backend, system.nodes[node_id].identity.private,
                     report_signed_body(backend, value, mac, ctx.ts))
    return Report(
        sender=node_id,
        value=value,
        ts=ctx.ts,
        hash_entries=tuple(entries),
        mac=mac,
        sigma=sigma,
    )


def nonleaf_phase2(system, node_id: int, reading: int, verified_reports,
                   ctx: RoundContext) -> Report:
    """Fold the node's own masked reading into the verified children."""
    if not 0 <= reading <= ctx.r_max:
        raise ParameterError(f"reading {reading} outside [0, {ctx.r_max}]")
    backend = system.backend
    node = system.nodes[node_id]
    mask = node.masks.consume_net_mask(ctx.day, ctx.t_x)
    masked = (reading + mask) % backend.params.p
    h = backend.hh_hash([masked] + [0] * (backend.params.d - 1))
    mac = hmac_tag(node.mac_key, backend.hh_encode(h))
    return _aggregate(system, node_id, masked, [(node_id, h)], mac, verified_reports, ctx)


def gateway_finalize(system, verified_reports, ctx: RoundContext) -> Report:
    """Gateway aggregation: a mask-only contribution.  Without mask
    relations the gateway adds nothing of its own; with them it injects its
    net mask and a matching hash/MAC so the utility checks still balance."""
    backend = system.backend
    gw = system.nodes[system.gateway_id]
    if gw.masks.lam == 0:
        return _aggregate(system, system.gateway_id, 0, [], XOR_IDENTITY,
                          verified_reports, ctx)
    mask = gw.masks.consume_net_mask(ctx.day, ctx.t_x)
    h = backend.hh_hash([mask] + [0] * (backend.params.d - 1))
    mac = hmac_tag(gw.mac_key, backend.hh_encode(h))
    return _aggregate(system, system.gateway_id, mask, [(system.gateway_id, h)],
                      mac, verified_reports, ctx)


# --- utility ------------------------------------------------------------------


def utility_verify(system, gw_report: Report, ctx: RoundContext) -> None:
    """Full end-to-end verification of the gateway report.  Raises
    ReplayRejected / AuthFailed / AttackDetected; returns None on accept."""
    backend = system.backend
    if abs(gw_report.ts - ctx.ts) > ctx.freshness_s:
        raise ReplayRejected(f"gateway report timestamp {gw_report.ts} is stale")
    gw_pub = system.nodes[system.gateway_id].identity.public
    body = report_signed_body(backend, gw_report.value, gw_report.mac, gw_report.ts)
    if not bls_verify(backend, gw_pub, body, gw_report.sigma):
        raise AuthFailed("gateway report signature failed verification")
    if not _hash_batch_ok(backend, [gw_report]):
        raise AttackDetected(
            "gateway report hash list does not match its aggregated value",
            culprits=[system.gateway_id],
            check="hash",
        )
    folded = XOR_IDENTITY
    for meter_id, h in gw_report.hash_entries:
        key = system.utility.mac_keys.get(meter_id)
        if key is None:
            raise AttackDetected(
                f"report carries a hash for unknown contributor {meter_id}",
                culprits=[gw_report.sender],
                check="mac",
            )
        folded = xor_bytes(folded, hmac_tag(key, backend.hh_encode(h)))
    if folded != gw_report.mac:
        raise AttackDetected(
            "aggregated MAC mismatch: some relayed value or hash was altered",
            check="mac",
        )


def utility_recover(system, gw_report: Report, ctx: RoundContext) -> int:
    """Strip the utility's net mask (and, on a closing slot, every billing
    mask) from the verified aggregate; the result is the exact plain sum."""
    backend = system.backend
    p = backend.params.p
    total = gw_report.value
    total = (total + system.utility.masks.consume_net_mask(ctx.day, ctx.t_x)) % p
    schedule = system.utility.masks.billing_schedule
    if schedule is not None:
        ref = schedule.period_of(ctx.day, ctx.t_x)
        if ref.is_closing(ctx.t_x):
            for meter_id in system.meter_ids:
                total = (total - system.utility.billing_mask(meter_id, ref.index)) % p
    bound = len(system.meter_ids) * ctx.r_max
    if total > bound:
        raise ConsistencyError(
            f"recovered aggregate {total} exceeds the sanity bound {bound}"
        )
    return total


# --- evidence and attacker identification -------------------------------------


class RoundEvidence:
    """What each node stored about the latest round, queryable by the
    utility: every non-leaf's verified child tuples, plus each node's own
    transmitted tuple as retained by its parent (the gateway's by the
    utility)."""

    def __init__(self):
        self.child_tuples = {}   # node -> {child -> (value, mac, sigma)}
        self.parent_copy = {}    # node -> (value, mac, sigma) seen by its parent

    def record(self, node_id: int, verified_reports):
        stored = self.child_tuples.setdefault(node_id, {})
        for rep in verified_reports:
            stored[rep.sender] = rep.evidence_tuple()
            self.parent_copy[rep.sender] = rep.evidence_tuple()

    def children_of(self, node_id: int) -> dict:
        return self.child_tuples.get(node_id, {})

    def own_tuple(self, node_id: int):
        return self.parent_copy.get(node_id)


def identify_attacker(system, tree: Tree, ctx: RoundContext,
                      evidence: RoundEvidence) -> int:
    """Bottom-up scan pinning the node that injected inconsistent data.

    For each non-leaf node, deepest first: (1) batch-verify the child
    tuples it stored — a failure means the node fabricated child evidence;
    (2) reconstruct its own contribution m' = M - sum(M_c) and compare the
    MAC it should have produced, HMAC_{K_nu}(H(m')), against the one implied
    by the XOR fold, MAC ^ xor(MAC_c).  The first mismatch names the
    attacker.
    """
    backend = system.backend
    p = backend.params.p
    for node_id in tree.nonleaf_nodes_bottom_up():
        stored = evidence.children_of(node_id)
        children = tree.children[node_id]
        if set(stored) != set(children):
            return node_id  # cannot exhibit evidence for its children
        items = []
        for child in children:
            value, mac, sigma = stored[child]
            items.append((
                system.nodes[child].identity.public,
                report_signed_body(backend, value, mac, ctx.ts),
                sigma,
            ))
        if not bls_batch_verify(backend, items):
            return node_id

        own = evidence.own_tuple(node_id)
        if own is None:
            return node_id
        value, mac, sigma = own
        parent = tree.parent.get(node_id, None)
        provider_ok = bls_verify(
            backend,
            system.nodes[node_id].identity.public,
            report_signed_body(backend, value, mac, ctx.ts),
            sigma,
        )
        if not provider_ok:
            # The tuple does not carry the node's own signature, so whoever
            # supplied it (the parent) tampered with the stored evidence.
            return parent if parent is not None else node_id

        extracted = value
        folded = mac
        for child in children:
            c_value, c_mac, _ = stored[child]
            extracted = (extracted - c_value) % p
            folded = xor_bytes(folded, c_mac)
        if system.contributes(node_id):
            h = backend.hh_hash([extracted] + [0] * (backend.params.d - 1))
            expected = hmac_tag(system.nodes[node_id].mac_key, backend.hh_encode(h))
            if expected != folded:
                return node_id
        else:
            if extracted != 0 or folded != XOR_IDENTITY:
                return node_id
    raise InconsistentEvidence(
        "every node's evidence checks out; stored evidence was tampered beyond the model"
    )


# --- round driver --------------------------------------------------------------


@dataclass
class DetectionRecord:
    where: int          # node id that detected (utility uses system.utility_id)
    check: str          # "replay" | "signature" | "hash" | "mac" | "ts"
    culprits: list = field(default_factory=list)


@dataclass
class RoundResult:
    gw_report: Report = None
    recovered: int = None
    evidence: RoundEvidence = None
    detections: list = field(default_factory=list)
    identified: int = None
    missing_meters: list = field(default_factory=list)
    error: str = None


def run_collection_round(system, tree: Tree, readings: dict, ctx: RoundContext,
                         relay_hook=None) -> RoundResult:
    """Drive one full round over `tree`.

    `relay_hook(sender, receiver, report) -> report` intercepts every
    report handoff (attack injection); returning a different report
    delivers that instead.
    """
    result = RoundResult(evidence=RoundEvidence())
    produced = {}

    def handoff(sender, receiver, report):
        if relay_hook is not None:
            return relay_hook(sender, receiver, report)
        return report

    # deepest nodes first so children exist before their parent aggregates
    order = sorted(tree.meters, key=lambda n: (-tree.depth[n], n))
    for node_id in order:
        kids = tree.children[node_id]
        if not kids:
            rep = leaf_generate(system, node_id, readings[node_id], ctx)
        else:
            incoming = [produced[c] for c in kids if c in produced]
            phase1 = nonleaf_phase1(system, node_id, incoming, ctx, result.evidence)
            for rej in phase1.rejected:
                result.detections.append(DetectionRecord(
                    where=node_id, check=rej.reason,
                    culprits=[rej.sender] if rej.accused else [],
                ))
            rep = nonleaf_phase2(system, node_id, readings[node_id],
                                 phase1.verified, ctx)
        produced[node_id] = handoff(node_id, tree.parent[node_id], rep)

    gw_children = [produced[c] for c in tree.children[tree.gateway] if c in produced]
    if gw_children:
        phase1 = nonleaf_phase1(system, tree.gateway, gw_children, ctx, result.evidence)
        for rej in phase1.rejected:
            result.detections.append(DetectionRecord(
                where=tree.gateway, check=rej.reason,
                culprits=[rej.sender] if rej.accused else [],
            ))
        verified = phase1.verified
    else:
        verified = []
    gw_report = gateway_finalize(system, verified, ctx)
    gw_report = handoff(tree.gateway, system.utility_id, gw_report)
    result.gw_report = gw_report
    result.evidence.parent_copy[tree.gateway] = gw_report.evidence_tuple()

    covered = {mid for mid, _ in gw_report.hash_entries}
    result.missing_meters = [m for m in tree.meters if m not in covered]

    try:
        utility_verify(system, gw_report, ctx)
    except AttackDetected as attack:
        result.detections.append(DetectionRecord(
            where=system.utility_id, check=attack.check, culprits=attack.culprits,
        ))
        if attack.culprits:
            result.identified = attack.culprits[0]
        else:
            try:
                result.identified = identify_attacker(system, tree, ctx, result.evidence)
            except InconsistentEvidence as exc:
                result.error = str(exc)
        return result
    except (ReplayRejected, AuthFailed) as exc:
        result.detections.append(DetectionRecord(
            where=system.utility_id,
            check="ts" if isinstance(exc, ReplayRejected) else "signature",
        ))
        result.error = str(exc)
        return result

    try:
        result.recovered = utility_recover(system, gw_report, ctx)
    except ConsistencyError as exc:
        result.error = str(exc)
    return result
