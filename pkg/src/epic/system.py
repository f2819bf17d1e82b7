"""System bootstrap: identities, certificates, proxies, and shared keys.

An offline trusted authority generates group parameters and certificates.
Every meter then (1) selects its proxies, (2) runs the three-message key
agreement with each proxy and with the utility, and (3) derives mask
schedules from the agreed seed keys.  The result is a System object holding
per-node state, which the protocol round drivers and the simulator operate
on.

Node ids: utility = 0, gateway = 1, meters = 2 .. n_meters+1.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .billing import PeriodSchedule, derive_billing_mask
from .crypto import GroupParams, TrustedAuthority, get_backend, keygen
from .errors import ConfigError
from .keymgmt import (
    NodeIdentity,
    NodeMaskManager,
    build_proxy_assignments,
    ke_accept_confirmation,
    ke_finalize,
    ke_initiate,
    ke_respond,
)

UTILITY_ID = 0
GATEWAY_ID = 1
FIRST_METER_ID = 2


@dataclass(frozen=True)
class SystemConfig:
    n_meters: int = 9
    proxies_per_meter: int = 2
    backend: str = "mock"
    hash_dimension: int = 1
    r_max: int = 10_000
    slots_per_day: int = 96
    periods_per_day: int = 4
    billing_enabled: bool = True
    infrastructure_in_pool: bool = True  # gateway and utility eligible as proxies
    proxies_gateway: int = 0
    proxies_utility: int = 0
    freshness_s: int = 5

    def __post_init__(self):
        if self.n_meters < 1:
            raise ConfigError("need at least one meter")
        if self.proxies_per_meter < 0:
            raise ConfigError("proxies_per_meter must be >= 0")
        if self.slots_per_day % self.periods_per_day:
            raise ConfigError("periods_per_day must divide slots_per_day")


@dataclass
class NodeState:
    identity: NodeIdentity
    masks: NodeMaskManager
    mac_key: bytes = field(default=b"", repr=False)  # pair key with the utility


@dataclass
class UtilityState:
    identity: NodeIdentity
    masks: NodeMaskManager
    mac_keys: dict = field(default_factory=dict, repr=False)  # meter/gw id -> key bytes

    def billing_mask(self, meter_id: int, period_index: int) -> int:
        key = self.mac_keys[meter_id]
        return derive_billing_mask(key, period_index, self.masks.backend.params.p)


@dataclass
class System:
    config: SystemConfig
    backend: object
    authority: TrustedAuthority
    nodes: dict                      # meter/gateway id -> NodeState
    utility: UtilityState
    assignments: dict                # node id -> ProxyAssignment
    schedule: PeriodSchedule | None

    utility_id: int = UTILITY_ID
    gateway_id: int = GATEWAY_ID

    @property
    def meter_ids(self) -> list:
        return sorted(n for n in self.nodes if n != self.gateway_id)

    def contributes(self, node_id: int) -> bool:
        """Whether the node adds an own hash/MAC to reports it emits."""
        if node_id == self.gateway_id:
            return self.nodes[node_id].masks.lam > 0
        return node_id in self.nodes


def meter_ids_for(n_meters: int) -> list:
    return list(range(FIRST_METER_ID, FIRST_METER_ID + n_meters))


def provision(config: SystemConfig, seed=0) -> System:
    """Bootstrap a full system deterministically from a seed."""
    rng = random.Random(f"epic-provision:{seed}")
    params = GroupParams(d=config.hash_dimension)
    backend = get_backend(config.backend, params if config.backend == "mock" else None)
    authority = TrustedAuthority.create(backend, rng)

    meters = meter_ids_for(config.n_meters)
    all_ids = [UTILITY_ID, GATEWAY_ID] + meters

    identities = {}
    for node_id in all_ids:
        x, y = keygen(backend, rng)
        identities[node_id] = NodeIdentity(
            node_id=node_id, private=x, public=y, cert=authority.issue(node_id, y)
        )

    pool = set(meters)
    if config.infrastructure_in_pool:
        pool |= {UTILITY_ID, GATEWAY_ID}
    counts = {m: config.proxies_per_meter for m in meters}
    selectors = list(meters)
    if config.proxies_gateway:
        counts[GATEWAY_ID] = config.proxies_gateway
        selectors.append(GATEWAY_ID)
    if config.proxies_utility:
        counts[UTILITY_ID] = config.proxies_utility
        selectors.append(UTILITY_ID)
    assignments = build_proxy_assignments(selectors, pool, counts, rng)

    # Every proxy relation needs a pair key; every meter (and the gateway)
    # also shares one with the utility for MACs and billing masks.
    pair_set = set()
    for node_id, assign in assignments.items():
        for proxy in assign.proxies:
            pair_set.add(frozenset((node_id, proxy)))
    for node_id in meters + [GATEWAY_ID]:
        pair_set.add(frozenset((node_id, UTILITY_ID)))

    seed_keys = {}
    ts0 = 0
    for pair in sorted(pair_set, key=sorted):
        a, b = sorted(pair)
        req, state = ke_initiate(backend, identities[a], b, ts0, rng)
        res, key_b = ke_respond(backend, identities[b], req, ts0, rng, authority.public)
        conf, key_a = ke_finalize(backend, identities[a], state, res, ts0, authority.public)
        ke_accept_confirmation(backend, key_b, conf, identities[a].public, ts0)
        assert key_a.element == key_b.element
        seed_keys[(a, b)] = key_a

    schedule = (
        PeriodSchedule.uniform(config.slots_per_day, config.periods_per_day)
        if config.billing_enabled
        else None
    )
    p = backend.params.p

    def build_manager(node_id, billing_mask_fn):
        mgr = NodeMaskManager(
            backend,
            node_id,
            identities[node_id].public,
            config.slots_per_day,
            billing_schedule=schedule,
            billing_mask_fn=billing_mask_fn,
        )
        for (a, b), key in seed_keys.items():
            if node_id in (a, b):
                peer = b if node_id == a else a
                mgr.register_peer(peer, identities[peer].public, key)
        assign = assignments.get(node_id)
        if assign:
            for proxy in assign.proxies:
                mgr.add_owned_relation(proxy)
            for owner in assign.selected_by:
                mgr.add_proxy_relation(owner)
        return mgr

    def utility_key(node_id) -> bytes:
        a, b = sorted((node_id, UTILITY_ID))
        return seed_keys[(a, b)].key_bytes

    nodes = {}
    for node_id in meters:
        key = utility_key(node_id)
        nodes[node_id] = NodeState(
            identity=identities[node_id],
            masks=build_manager(
                node_id,
                lambda b, key=key: derive_billing_mask(key, b, p),
            ),
            mac_key=key,
        )
    gw_key = utility_key(GATEWAY_ID)
    nodes[GATEWAY_ID] = NodeState(
        identity=identities[GATEWAY_ID],
        masks=build_manager(GATEWAY_ID, None),
        mac_key=gw_key,
    )

    utility = UtilityState(
        identity=identities[UTILITY_ID],
        masks=build_manager(UTILITY_ID, None),
        mac_keys={node_id: utility_key(node_id) for node_id in meters + [GATEWAY_ID]},
    )

    return System(
        config=config,
        backend=backend,
        authority=authority,
        nodes=nodes,
        utility=utility,
        assignments=assignments,
        schedule=schedule,
    )
