#!/usr/bin/env python3
"""Zone-based topology and the three-tier latency model.

Node ids are assigned deterministically by :func:`build_topology`: the cloud is
``0``, followed by the end-user devices zone by zone, then the dedicated fogs,
then the participant devices. End-user devices issue requests, the other nodes
can compute.

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
from dataclasses import dataclass, field, replace
from collections.abc import Mapping
from typing import NamedTuple, Optional
import sys
if sys.version_info >= (3, 11):
    from typing import Self
else:  # pragma: no cover
    from typing_extensions import Self
from itertools import chain
import numpy as np
from ordered_enum import OrderedEnum
from igbpyutils.iter import no_duplicates
from .engine import RngStream, SimTime, to_us

CLOUD_ID = 0

class UnknownNodeError(KeyError): pass

class LatencyTier(OrderedEnum):  # ordered so that the broker can rank by tier
    INTRA_ZONE = 1
    INTER_ZONE = 2
    DEVICE_TO_CLOUD = 3
    @property
    def label(self) -> str:
        return self.name.lower()

class TierParams(NamedTuple):
    mean_ms :float
    deviation_ms :float

@dataclass(kw_only=True, frozen=True)
class LatencyModel:
    """Per-tier one-way latency parameters.

    ``deviation_meaning`` says how ``deviation_ms`` is read: ``"stddev"`` (the
    default) uses it as the standard deviation, ``"variance"`` as a variance in
    ms² whose square root becomes the standard deviation."""
    intra_zone :TierParams = TierParams(5.0, 2.0)
    inter_zone :TierParams = TierParams(10.0, 3.0)
    device_to_cloud :TierParams = TierParams(50.0, 6.0)
    deviation_meaning :str = 'stddev'

    def params(self, tier :LatencyTier) -> TierParams:
        match tier:
            case LatencyTier.INTRA_ZONE: return self.intra_zone
            case LatencyTier.INTER_ZONE: return self.inter_zone
            case LatencyTier.DEVICE_TO_CLOUD: return self.device_to_cloud
            case _: raise ValueError(f"unhandled tier {tier!r}")

    def stddev(self, tier :LatencyTier) -> float:
        dev = self.params(tier).deviation_ms
        return math.sqrt(dev) if self.deviation_meaning == 'variance' else dev

    def validate(self) -> Self:
        if self.deviation_meaning not in ('stddev', 'variance'):
            raise ValueError(f"deviation_meaning must be 'stddev' or 'variance', not {self.deviation_meaning!r}")
        for tier in LatencyTier:
            p = self.params(tier)
            if not p.mean_ms > 0:
                raise ValueError(f"{tier.label}: mean_ms must be > 0")
            if not p.deviation_ms >= 0:
                raise ValueError(f"{tier.label}: deviation_ms must be >= 0")
        return self

class Zone(NamedTuple):
    zone_id :int
    members :tuple[int, ...]

@dataclass(kw_only=True, frozen=True)
class Topology:
    """Node placements and the attachment tree.

    ``parent`` maps each non-cloud node to the node it is attached to; an empty
    map means the devices have not been attached yet."""
    zones :tuple[Zone, ...]
    devices :tuple[int, ...]
    fogs :tuple[int, ...] = ()
    participants :tuple[int, ...] = ()
    cloud_id :int = CLOUD_ID
    parent :Mapping[int, int] = field(default_factory=dict)
    zone_of :Mapping[int, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        zone_of = { n: z.zone_id for z in self.zones for n in z.members }
        object.__setattr__(self, 'zone_of', zone_of)

    @property
    def endpoints(self) -> tuple[int, ...]:
        """The nodes attached to a fog or the cloud: devices and participants."""
        return self.devices + self.participants

    def __contains__(self, node :int):
        return node == self.cloud_id or node in self.zone_of

    def zone(self, node :int) -> Optional[int]:
        """The zone of a node, ``None`` for the cloud."""
        if node == self.cloud_id: return None
        try:
            return self.zone_of[node]
        except KeyError as ex:
            raise UnknownNodeError(node) from ex

    def with_attachment(self, attachment :Mapping[int, int]) -> Self:
        """Return a new topology with the given endpoint attachment; fogs are attached to the cloud."""
        parent = dict(attachment)
        for f in self.fogs: parent[f] = self.cloud_id
        return replace(self, parent=parent).validate()

    def validate(self) -> Self:
        members = set(no_duplicates( chain.from_iterable(z.members for z in self.zones), name='zone member' ))
        set(no_duplicates( (z.zone_id for z in self.zones), name='zone id' ))
        if self.cloud_id in members:
            raise ValueError("the cloud must not be a zone member")
        for n in chain(self.devices, self.fogs, self.participants):
            if n not in members:
                raise ValueError(f"node {n} is not in any zone")
        if self.parent:
            # every node must reach the cloud in at most two hops: endpoint -> fog -> cloud
            for n in chain(self.endpoints, self.fogs):
                p = self.parent.get(n)
                if p is None:
                    raise ValueError(f"node {n} is not attached")
                if n in self.fogs and p != self.cloud_id:
                    raise ValueError(f"fog {n} must be attached to the cloud")
                if n not in self.fogs and p != self.cloud_id and p not in self.fogs:
                    raise ValueError(f"node {n} is attached to {p}, which is neither a fog nor the cloud")
        return self

def build_topology(*, zones :int, devices_per_zone :int, fogs_per_zone :int = 0, participants_per_zone :int = 0) -> Topology:
    """Place the nodes of a scenario into zones (see the module documentation for the id layout)."""
    if min(zones, devices_per_zone, fogs_per_zone, participants_per_zone) < 0:
        raise ValueError("counts must not be negative")
    nxt = CLOUD_ID + 1
    def alloc(per_zone :int) -> list[list[int]]:
        nonlocal nxt
        out = []
        for _ in range(zones):
            out.append(list(range(nxt, nxt+per_zone)))
            nxt += per_zone
        return out
    devs, fogs, parts = alloc(devices_per_zone), alloc(fogs_per_zone), alloc(participants_per_zone)
    return Topology(
        zones = tuple( Zone(z, tuple(devs[z] + fogs[z] + parts[z])) for z in range(zones) ),
        devices = tuple(chain.from_iterable(devs)),
        fogs = tuple(chain.from_iterable(fogs)),
        participants = tuple(chain.from_iterable(parts)) ).validate()

def classify(src :int, dst :int, topo :Topology) -> LatencyTier:
    """Classify the link between two nodes; symmetric in its endpoints."""
    zs, zd = topo.zone(src), topo.zone(dst)  # raises UnknownNodeError
    if src == topo.cloud_id or dst == topo.cloud_id:
        return LatencyTier.DEVICE_TO_CLOUD
    return LatencyTier.INTRA_ZONE if zs == zd else LatencyTier.INTER_ZONE

def sample_one_way_latency(model :LatencyModel, tier :LatencyTier, rng :RngStream, size :Optional[int] = None):
    """Draw one-way latencies in ms from the tier's normal distribution, re-sampling negative draws.

    Returns a ``float``, or an array of ``size`` values."""
    mean, sd = model.params(tier).mean_ms, model.stddev(tier)
    if size is None:
        while True:
            x = float(rng.normal(mean, sd))
            if x >= 0: return x
    vals = np.asarray(rng.normal(mean, sd, size), dtype=float)
    while (neg := vals < 0).any():
        vals[neg] = rng.normal(mean, sd, int(neg.sum()))
    return vals

def transfer_time(payload_bytes :int, bandwidth_bytes_per_s :Optional[float]) -> float:
    """Serialization time of a payload in ms; ``None`` or infinite bandwidth means no delay."""
    if payload_bytes < 0:
        raise ValueError("payload size must not be negative")
    if bandwidth_bytes_per_s is None or math.isinf(bandwidth_bytes_per_s) or payload_bytes == 0:
        return 0.0
    if not bandwidth_bytes_per_s > 0:
        raise ValueError("bandwidth must be positive")
    return payload_bytes * 1000 / bandwidth_bytes_per_s

class Network:
    """The latency model of one run, bound to its topology and latency stream."""

    def __init__(self, topo :Topology, model :LatencyModel, rng :RngStream, *, bandwidth_bytes_per_s :Optional[float] = None):
        self.topo = topo
        self.model = model
        self.rng = rng
        self.bandwidth_bytes_per_s = bandwidth_bytes_per_s

    def one_way_us(self, src :int, dst :int, payload_bytes :int = 0) -> SimTime:
        """The delay of one message from ``src`` to ``dst``: a latency draw plus the transfer time."""
        tier = classify(src, dst, self.topo)
        return to_us( sample_one_way_latency(self.model, tier, self.rng)
                      + transfer_time(payload_bytes, self.bandwidth_bytes_per_s) )
