#!/usr/bin/env python3
"""Node lifecycle: kinds, leases, churn, soft-state caches, and FIFO service.

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
from enum import Enum
from collections import deque
from dataclasses import dataclass, field
from typing import NamedTuple, Optional
import sys
if sys.version_info >= (3, 11):
    from typing import Self
else:  # pragma: no cover
    from typing_extensions import Self
from .engine import SimTime, EventQueue, EventKind, RngStream, to_us
from .workload import Request

class NodeKind(Enum):
    PARTICIPANT_DEVICE = 1
    DEDICATED_FOG = 2
    CLOUD_DATACENTER = 3
    @property
    def churns(self) -> bool:
        return self == NodeKind.PARTICIPANT_DEVICE

class LeaseError(RuntimeError): pass
class NodeStateError(RuntimeError): pass
class ServeError(RuntimeError): pass
class NodeDisconnectedError(ServeError): pass
class CacheMissError(ServeError): pass

class LeaseStatus(Enum):
    ACTIVE = 1
    EXPIRED = 2
    BROKEN_FAULTY = 3

@dataclass(kw_only=True)
class Lease:
    """A participant's commitment of its device to the broker for a fixed duration.

    The only transitions are ``ACTIVE`` to ``EXPIRED`` (via :meth:`expire`) and
    ``ACTIVE`` to ``BROKEN_FAULTY`` (via :meth:`break_faulty`)."""
    lease_id :int
    node_id :int
    start :SimTime
    duration_ms :float
    price_rate :float  # currency per minute
    status :LeaseStatus = LeaseStatus.ACTIVE
    closed_at :Optional[SimTime] = None

    @property
    def expiry(self) -> SimTime:
        return self.start + to_us(self.duration_ms)

    @property
    def duration_minutes(self) -> float:
        return self.duration_ms / 60_000

    def expire(self, now :SimTime) -> Self:
        if self.status != LeaseStatus.ACTIVE:
            raise LeaseError(f"lease {self.lease_id} is {self.status.name}, can't expire it")
        if now < self.expiry:
            raise LeaseError(f"lease {self.lease_id} can't expire at {now}us before its expiry at {self.expiry}us")
        self.status = LeaseStatus.EXPIRED
        self.closed_at = now
        return self

    def break_faulty(self, now :SimTime) -> Self:
        if self.status != LeaseStatus.ACTIVE:
            raise LeaseError(f"lease {self.lease_id} is {self.status.name}, can't break it")
        if now >= self.expiry:
            raise LeaseError(f"lease {self.lease_id} has already run its full duration")
        self.status = LeaseStatus.BROKEN_FAULTY
        self.closed_at = now
        return self

@dataclass(kw_only=True, frozen=True)
class ChurnProcess:
    """Exponential on/off process of a participant device."""
    mean_uptime_s :float = 60.0
    mean_downtime_s :float = 10.0
    def validate(self) -> Self:
        if not self.mean_uptime_s > 0: raise ValueError("mean_uptime_s must be > 0")
        if not self.mean_downtime_s > 0: raise ValueError("mean_downtime_s must be > 0")
        return self

@dataclass(kw_only=True, frozen=True)
class ServiceProfile:
    """Service-time model of a node. ``servers=None`` means an unlimited number of servers (no queueing)."""
    solve_time_ms :float = 2.0
    factorization_time_ms :float = 8.0
    servers :Optional[int] = 1
    def validate(self) -> Self:
        if not self.solve_time_ms > 0: raise ValueError("solve_time_ms must be > 0")
        if not self.factorization_time_ms > 0: raise ValueError("factorization_time_ms must be > 0")
        if self.servers not in (None, 1): raise ValueError("servers must be 1 or None (unlimited)")
        return self

@dataclass
class CacheFlags:
    has_A :bool = False
    has_factorization :bool = False

class ServiceSlot(NamedTuple):
    start :SimTime
    completion :SimTime
    cold :bool

@dataclass(kw_only=True)
class NodeState:
    """Mutable state of a compute node.

    ``cache`` holds one :class:`CacheFlags` per tenant (requesting device).
    ``queue`` holds the ids of requests accepted but not yet completed, in FIFO
    order. ``epoch`` is incremented on every disconnect; messages and service
    completions issued under an older epoch are stale."""
    node_id :int
    kind :NodeKind
    zone_id :Optional[int]
    profile :ServiceProfile
    connected :bool = True
    cache :dict[int, CacheFlags] = field(default_factory=dict)
    queue :deque[int] = field(default_factory=deque)
    busy_until :SimTime = 0
    busy_us :SimTime = 0
    epoch :int = 0
    up_since :SimTime = 0
    lease :Optional[Lease] = None

    def has_A(self, device_id :int) -> bool:
        flags = self.cache.get(device_id)
        return flags is not None and flags.has_A

    def store_A(self, device_id :int):
        if not self.connected:
            raise NodeDisconnectedError(f"node {self.node_id} is disconnected")
        self.cache.setdefault(device_id, CacheFlags()).has_A = True

    @property
    def leased(self) -> bool:
        return self.lease is not None and self.lease.status == LeaseStatus.ACTIVE

def open_lease(state :NodeState, duration_ms :float, price_rate :float, now :SimTime, *,
               events :EventQueue, lease_id :int) -> Lease:
    """Lease a participant device and schedule the lease's expiry."""
    if state.kind != NodeKind.PARTICIPANT_DEVICE:
        raise LeaseError(f"node {state.node_id} is a {state.kind.name}, only participant devices are leased")
    if state.leased:
        raise LeaseError(f"node {state.node_id} already has active lease {state.lease.lease_id}")
    if not duration_ms > 0:
        raise LeaseError("lease duration must be > 0")
    state.lease = Lease(lease_id=lease_id, node_id=state.node_id, start=now, duration_ms=duration_ms, price_rate=price_rate)
    events.schedule(state.lease.expiry, EventKind.LEASE_EXPIRY, state.node_id, lease_id)
    return state.lease

def next_churn_transition(churn :ChurnProcess, currently_up :bool, rng :RngStream) -> float:
    """Time in seconds until the node's next disconnect (if up) or reconnect (if down)."""
    mean = churn.mean_uptime_s if currently_up else churn.mean_downtime_s
    while True:
        x = float(rng.exponential(mean))
        if x > 0: return x

def on_disconnect(state :NodeState, now :SimTime) -> set[int]:
    """Take a node offline, dropping its soft state; returns the ids of the requests it held."""
    if not state.connected:
        raise NodeStateError(f"node {state.node_id} is already disconnected")
    if not state.kind.churns:
        raise NodeStateError(f"{state.kind.name} node {state.node_id} never disconnects")
    failed = set(state.queue)
    state.queue.clear()
    state.cache.clear()
    state.connected = False
    state.epoch += 1
    state.busy_until = now
    if state.leased and now < state.lease.expiry:
        state.lease.break_faulty(now)
    return failed

def on_reconnect(state :NodeState, now :SimTime):
    """Bring a node back online; its cache stays cold."""
    if state.connected:
        raise NodeStateError(f"node {state.node_id} is already connected")
    state.connected = True
    state.up_since = now
    state.busy_until = max(state.busy_until, now)

def serve(state :NodeState, profile :ServiceProfile, req :Request, now :SimTime) -> ServiceSlot:
    """Enqueue a request, returning when its service starts and completes.

    The first request of a tenant after the node got the tenant's matrix pays
    the factorization time."""
    if not state.connected:
        raise NodeDisconnectedError(f"request {req.request_id} reached disconnected node {state.node_id}")
    flags = state.cache.get(req.device_id)
    if flags is None or not flags.has_A:
        raise CacheMissError(f"node {state.node_id} doesn't hold the matrix of device {req.device_id}")
    start = now if profile.servers is None else max(now, state.busy_until)
    cold = not flags.has_factorization
    service = to_us(profile.solve_time_ms) + ( to_us(profile.factorization_time_ms) if cold else 0 )
    completion = start + service
    flags.has_factorization = True
    if profile.servers is not None:
        state.busy_until = completion
    state.busy_us += service
    state.queue.append(req.request_id)
    return ServiceSlot(start=start, completion=completion, cold=cold)
