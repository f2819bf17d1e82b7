"""Attack injection: report mutations applied at relay time.

Five scenario types cover the threat model:

* ``hash``     — an aggregating meter alters one hash in its outgoing list
                 (its signature stays valid: hashes are not signed);
* ``reading``  — it shifts its aggregated masked value and re-signs;
* ``both``     — it shifts the value and patches the victim's hash by the
                 matching homomorphic delta, so per-hop checks stay
                 consistent and only the end-to-end MAC can catch it;
* ``replay``   — a previous round's report is delivered in place of the
                 current one;
* ``tamper``   — an external adversary flips a signed field in flight
                 (no re-signing possible without the sender's key).

Each builder returns a relay hook `(sender, receiver, report) -> report`
compatible with the protocol round driver and the simulator.
"""

from __future__ import annotations

from dataclasses import dataclass

from .crypto import bls_sign
from .protocol import Report, report_signed_body

ATTACK_TYPES = ("hash", "reading", "both", "replay", "tamper")

# Detection point and accusation expectations per type: modification attacks
# name their sender; replay and tamper drop without accusation.
ACCUSING_TYPES = ("hash", "reading", "both")


@dataclass(frozen=True)
class AttackScenario:
    attacker: int                # node whose relayed output is affected
    attack_type: str             # one of ATTACK_TYPES
    target_child: int = None     # victim meter for hash/both (defaults to first entry)
    activation_round: int = 0
    delta: int = 1               # value shift for reading/both


def _resign(system, report: Report, value: int, entries) -> Report:
    backend = system.backend
    node = system.nodes[report.sender]
    sigma = bls_sign(
        backend,
        node.identity.private,
        report_signed_body(backend, value, report.mac, report.ts),
    )
    return Report(
        sender=report.sender,
        value=value,
        ts=report.ts,
        hash_entries=tuple(entries),
        mac=report.mac,
        sigma=sigma,
    )


def _patch_entry(backend, entries, victim, delta_hash):
    out = []
    patched = False
    for meter_id, h in entries:
        if not patched and (victim is None or meter_id == victim):
            out.append((meter_id, backend.hh_add(h, delta_hash)))
            patched = True
        else:
            out.append((meter_id, h))
    if not patched:
        raise ValueError(f"victim {victim} not present in the report's hash list")
    return out


def mutate_hash_only(system, report: Report, victim=None, delta: int = 1) -> Report:
    """Alter one carried hash; value and signature untouched."""
    backend = system.backend
    delta_hash = backend.hh_hash([delta % backend.params.p] + [0] * (backend.params.d - 1))
    entries = _patch_entry(backend, report.hash_entries, victim, delta_hash)
    return Report(
        sender=report.sender,
        value=report.value,
        ts=report.ts,
        hash_entries=tuple(entries),
        mac=report.mac,
        sigma=report.sigma,
    )


def mutate_reading_only(system, report: Report, delta: int = 1) -> Report:
    """Shift the aggregated masked value and re-sign (hashes untouched)."""
    backend = system.backend
    value = (report.value + delta) % backend.params.p
    return _resign(system, report, value, report.hash_entries)


def mutate_both(system, report: Report, victim=None, delta: int = 1) -> Report:
    """Shift the value and patch the victim's hash consistently, evading
    every per-hop check; the victim's MAC still binds the original hash."""
    backend = system.backend
    value = (report.value + delta) % backend.params.p
    delta_hash = backend.hh_hash([delta % backend.params.p] + [0] * (backend.params.d - 1))
    entries = _patch_entry(backend, report.hash_entries, victim, delta_hash)
    return _resign(system, report, value, entries)


def mutate_signed_field(report: Report) -> Report:
    """External in-flight corruption of a signed field (MAC byte flip)."""
    mac = bytes([report.mac[0] ^ 0x01]) + report.mac[1:]
    return Report(
        sender=report.sender,
        value=report.value,
        ts=report.ts,
        hash_entries=report.hash_entries,
        mac=mac,
        sigma=report.sigma,
    )


def make_relay_hook(system, scenario: AttackScenario, replayed_report: Report = None):
    """Build the relay hook implementing `scenario`.  For replay scenarios,
    `replayed_report` is the stale report to substitute."""
    kind = scenario.attack_type
    if kind not in ATTACK_TYPES:
        raise ValueError(f"unknown attack type {kind!r}")
    if kind == "replay" and replayed_report is None:
        raise ValueError("replay scenario needs the previous round's report")

    def hook(sender, receiver, report):
        if sender != scenario.attacker:
            return report
        if kind == "hash":
            return mutate_hash_only(system, report, scenario.target_child, scenario.delta)
        if kind == "reading":
            return mutate_reading_only(system, report, scenario.delta)
        if kind == "both":
            return mutate_both(system, report, scenario.target_child, scenario.delta)
        if kind == "replay":
            return replayed_report
        return mutate_signed_field(report)

    return hook
