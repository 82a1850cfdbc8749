#!/usr/bin/env python3
"""The centralized broker: registration and profiling, attachment, request
placement, failure rerouting, monitoring, and the resource database.

The broker has an instantaneous global view of all node states (a zero-latency
control plane). Placement depends on the :class:`SchedulingPolicy`:

- ``NEAREST_TIER_FIRST``: among the available nodes of the compute pool, the
  lowest latency tier as seen from the requesting device wins, then the shortest
  queue, then the lowest node id. The cloud is the last resort.
- ``LIFETIME_AWARE``: like the above, but among equally loaded nodes of a tier
  the one with the largest predicted remaining uptime wins.
- ``RANDOM_FEASIBLE``: uniformly random among the available nodes and the cloud.
- ``CLOUD_ONLY``: always the cloud.

A node is available when it is connected, its queue is shorter than
``max_queue_length`` (0 means unlimited), and, for participant devices, it
holds an active lease.

Author, Copyright, and License
------------------------------
Copyright (c) 2024 Hauke Daempfling (haukex@zero-g.net)
at the Leibniz Institute of Freshwater Ecology and Inland Fisheries (IGB),
Berlin, Germany, https://www.igb-berlin.de/

This program is free software: you can redistribute it and/or modify
it under the terms of the GNU General Public License as published by
the Free Software Foundation, either version 3 of the License, or
(at your option) any later version.

This program is distributed in the hope that it will be useful,
but WITHOUT ANY WARRANTY; without even the implied warranty of
MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE. See the
GNU General Public License for more details.

You should have received a copy of the GNU General Public License
along with this program. If not, see https://www.gnu.org/licenses/
"""
import math
from enum import Enum
from statistics import fmean
from dataclasses import dataclass, field
from collections.abc import Mapping, Sequence, Iterable
from typing import NamedTuple, Optional
import sys
if sys.version_info >= (3, 11):
    from typing import Self
else:  # pragma: no cover
    from typing_extensions import Self
from .engine import SimTime, RngStream, to_ms
from .network import Topology, classify
from .nodes import NodeKind, NodeState, ServiceProfile, Lease, LeaseStatus
from .workload import Request, Assignment

class BrokerError(RuntimeError): pass

class DeploymentKind(Enum):
    CLOUD_ONLY = 'cloud'
    DEDICATED_FOGS = 'fog'
    OEC_CLOUD = 'oec'
    @classmethod
    def from_string(cls, string :str) -> Self:
        try:
            return cls(string.strip().lower())
        except ValueError as ex:
            raise ValueError(f"unknown deployment {string!r}, expected one of: "
                             + ", ".join( k.value for k in cls )) from ex

class SchedulingPolicy(Enum):
    NEAREST_TIER_FIRST = 'nearest_tier_first'
    LIFETIME_AWARE = 'lifetime_aware'
    RANDOM_FEASIBLE = 'random_feasible'
    CLOUD_ONLY = 'cloud_only'

class NodeOffer(NamedTuple):
    node_id :int
    kind :NodeKind
    zone_id :Optional[int]
    profile :ServiceProfile

@dataclass(kw_only=True)
class ResourceRecord:
    """The broker's profile of a registered node."""
    node_id :int
    kind :NodeKind
    zone_id :Optional[int]
    profile :ServiceProfile
    configured_lifetime_ms :float
    predicted_lifetime_ms :float
    lease :Optional[Lease] = None
    up_since :Optional[SimTime] = None
    up_intervals :list[SimTime] = field(default_factory=list)
    samples_total :int = 0
    samples_up :int = 0
    leases_expired :int = 0
    leases_broken :int = 0
    @property
    def availability(self) -> float:
        """Fraction of monitoring samples in which the node was connected."""
        return self.samples_up / self.samples_total if self.samples_total else 1.0
    @property
    def reliability(self) -> float:
        """Fraction of closed leases that ran their full duration."""
        closed = self.leases_expired + self.leases_broken
        return self.leases_expired / closed if closed else 1.0

class MonitoringSample(NamedTuple):
    at :SimTime
    node_id :int
    utilization :float
    connected :bool

class RequestLogEntry(NamedTuple):
    at :SimTime
    request_id :int
    device_id :int
    node_id :int
    attempt :int

@dataclass
class ResourceDatabase:
    records :dict[int, ResourceRecord] = field(default_factory=dict)
    leases :list[Lease] = field(default_factory=list)
    samples :list[MonitoringSample] = field(default_factory=list)
    request_log :list[RequestLogEntry] = field(default_factory=list)
    def lease_counts(self) -> dict[LeaseStatus, int]:
        counts = { s: 0 for s in LeaseStatus }
        for lease in self.leases: counts[lease.status] += 1
        return counts

def attach_devices(topo :Topology, deployment :DeploymentKind, rng :RngStream) -> dict[int, int]:
    """Randomly match every endpoint (device or participant) to a fog, or to the cloud in the cloud-only deployment."""
    targets :tuple[int, ...] = (topo.cloud_id,) if deployment == DeploymentKind.CLOUD_ONLY else topo.fogs
    if not targets:
        raise BrokerError(f"no attachment target for the {deployment.value} deployment (no fogs)")
    endpoints = topo.endpoints
    if not endpoints: return {}
    picks = rng.integers(0, len(targets), size=len(endpoints))
    return { e: targets[int(p)] for e, p in zip(endpoints, picks, strict=True) }

class Broker:
    """Places requests on the ``pool`` of compute nodes, falling back to the cloud."""

    def __init__(self, topo :Topology, nodes :Mapping[int, NodeState], *, pool :Iterable[int],
                 policy :SchedulingPolicy = SchedulingPolicy.NEAREST_TIER_FIRST, rng :Optional[RngStream] = None,
                 max_queue_length :int = 0, db :Optional[ResourceDatabase] = None):
        self.topo = topo
        self.nodes = nodes
        self.pool :tuple[int, ...] = tuple(sorted(pool))
        self.policy = policy
        self.rng = rng
        self.max_queue_length = max_queue_length
        self.db = ResourceDatabase() if db is None else db
        if policy == SchedulingPolicy.RANDOM_FEASIBLE and rng is None:
            raise BrokerError("the random policy needs a random stream")
        if topo.cloud_id in self.pool:
            raise BrokerError("the cloud is not part of the compute pool, it is always the fallback")

    def register_and_profile(self, offer :NodeOffer, now :SimTime, *, mean_uptime_s :Optional[float] = None) -> ResourceRecord:
        """Register a node; participants start with their configured mean uptime as predicted lifetime."""
        if offer.node_id in self.db.records:
            raise BrokerError(f"node {offer.node_id} is already registered")
        if offer.kind.churns:
            if mean_uptime_s is None or not mean_uptime_s > 0:
                raise BrokerError(f"participant {offer.node_id} needs a positive mean uptime")
            lifetime = mean_uptime_s * 1000
        else:
            lifetime = math.inf
        rec = ResourceRecord(node_id=offer.node_id, kind=offer.kind, zone_id=offer.zone_id, profile=offer.profile,
                             configured_lifetime_ms=lifetime, predicted_lifetime_ms=lifetime, up_since=now)
        self.db.records[offer.node_id] = rec
        return rec

    def available(self, node_id :int) -> bool:
        state = self.nodes[node_id]
        if not state.connected: return False
        if state.kind.churns and not state.leased: return False
        return self.max_queue_length == 0 or len(state.queue) < self.max_queue_length

    def _remaining_lifetime_ms(self, node_id :int, now :SimTime) -> float:
        rec = self.db.records[node_id]
        return rec.predicted_lifetime_ms - to_ms(now - self.nodes[node_id].up_since)

    def select_target(self, device_id :int, now :SimTime, *, exclude :Sequence[int]|frozenset[int] = frozenset()) -> int:
        """Choose the node for a request (or upload) of ``device_id``; never a disconnected node."""
        cloud = self.topo.cloud_id
        if self.policy == SchedulingPolicy.CLOUD_ONLY:
            return cloud
        cands = [ n for n in self.pool if n not in exclude and self.available(n) ]
        if self.policy == SchedulingPolicy.RANDOM_FEASIBLE:
            options = cands + [cloud]
            return options[int(self.rng.integers(0, len(options)))]
        def load_key(n :int):
            return classify(device_id, n, self.topo), len(self.nodes[n].queue)
        if self.policy == SchedulingPolicy.LIFETIME_AWARE:
            best = min(cands, key=lambda n: (*load_key(n), -self._remaining_lifetime_ms(n, now), n), default=None)
        else:
            best = min(cands, key=lambda n: (*load_key(n), n), default=None)
        return cloud if best is None else best

    def assign(self, req :Request, node_id :int, now :SimTime):
        if node_id not in self.db.records:
            raise BrokerError(f"node {node_id} is not registered")
        req.assignments.append(Assignment(now, node_id))
        self.db.request_log.append(RequestLogEntry(at=now, request_id=req.request_id, device_id=req.device_id,
                                                   node_id=node_id, attempt=len(req.assignments)))

    def handle_failure(self, req :Request, failed_node :int, now :SimTime) -> int:
        """Reassign a request that failed on ``failed_node``; its creation time stays unchanged."""
        target = self.select_target(req.device_id, now, exclude=frozenset((failed_node,)))
        self.assign(req, target, now)
        return target

    def record_lease(self, lease :Lease):
        self.db.leases.append(lease)
        self.db.records[lease.node_id].lease = lease

    def record_lease_close(self, lease :Lease):
        rec = self.db.records[lease.node_id]
        match lease.status:
            case LeaseStatus.EXPIRED: rec.leases_expired += 1
            case LeaseStatus.BROKEN_FAULTY: rec.leases_broken += 1
            case _: raise BrokerError(f"lease {lease.lease_id} is still {lease.status.name}")

    def record_monitoring_sample(self, node_id :int, now :SimTime, utilization :float, connected :bool):
        """Store a sample and update the node's availability history and predicted lifetime."""
        rec = self.db.records[node_id]
        self.db.samples.append(MonitoringSample(at=now, node_id=node_id, utilization=utilization, connected=connected))
        rec.samples_total += 1
        if connected:
            rec.samples_up += 1
            if rec.up_since is None: rec.up_since = now
        elif rec.up_since is not None:
            rec.up_intervals.append(now - rec.up_since)
            rec.up_since = None
        if len(rec.up_intervals) >= 2:
            rec.predicted_lifetime_ms = to_ms(fmean(rec.up_intervals))
        else:
            rec.predicted_lifetime_ms = rec.configured_lifetime_ms
