#!/usr/bin/env python3
"""The offloaded workload: a device uploads its matrix ``A`` once, then sends
a stream of requests, each carrying a fresh right-hand side ``b``.

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
from dataclasses import dataclass, field
from typing import NamedTuple, Optional
import sys
if sys.version_info >= (3, 11):
    from typing import Self
else:  # pragma: no cover
    from typing_extensions import Self
import numpy as np
from .engine import SimTime, RngStream, to_ms
from .network import Network, LatencyTier

SPARSE_ENTRY_BYTES = 16  # two 4-byte indices and one 8-byte value, rounded up
VECTOR_ELEMENT_BYTES = 8

@dataclass(kw_only=True)
class TaskSpec:
    """The linear system ``A x = b``; payload sizes default to encodings derived from ``n`` and ``nnz``."""
    n :int = 147
    nnz :int = 1294
    payload_A_bytes :Optional[int] = None
    payload_b_bytes :Optional[int] = None
    payload_x_bytes :Optional[int] = None
    def __post_init__(self):
        if self.payload_A_bytes is None: self.payload_A_bytes = SPARSE_ENTRY_BYTES * self.nnz
        if self.payload_b_bytes is None: self.payload_b_bytes = VECTOR_ELEMENT_BYTES * self.n
        if self.payload_x_bytes is None: self.payload_x_bytes = VECTOR_ELEMENT_BYTES * self.n
    def validate(self) -> Self:
        if not self.n > 0: raise ValueError("n must be > 0")
        if not 0 <= self.nnz <= self.n**2: raise ValueError("nnz must be between 0 and n²")
        for name in ('payload_A_bytes', 'payload_b_bytes', 'payload_x_bytes'):
            if getattr(self, name) < 0: raise ValueError(f"{name} must not be negative")
        return self

class Assignment(NamedTuple):
    at :SimTime
    node_id :int

@dataclass(kw_only=True)
class Request:
    """One offloaded solve request and the nodes it was assigned to, in order."""
    request_id :int
    device_id :int
    created_at :SimTime
    assignments :list[Assignment] = field(default_factory=list)
    @property
    def retry_count(self) -> int:
        return max(len(self.assignments) - 1, 0)
    @property
    def node_id(self) -> Optional[int]:
        """The current assignment."""
        return self.assignments[-1].node_id if self.assignments else None

class RequestOutcome(NamedTuple):
    request_id :int
    device_id :int
    created_at :SimTime
    completed_at :SimTime
    served_by :int
    tier :LatencyTier
    retries :int
    @property
    def processing_time_us(self) -> SimTime:
        return self.completed_at - self.created_at
    @property
    def processing_time_ms(self) -> float:
        return to_ms(self.processing_time_us)

def generate_arrivals(rate_per_s :float, horizon_s :float, rng :RngStream) -> np.ndarray:
    """Poisson arrival times in seconds, sorted, within ``[0, horizon_s)``.

    A rate or horizon of zero yields no arrivals."""
    if rate_per_s < 0 or horizon_s < 0:
        raise ValueError("rate and horizon must not be negative")
    times :list[float] = []
    if rate_per_s == 0 or horizon_s == 0:
        return np.array(times, dtype=float)
    mean_gap = 1 / rate_per_s
    t = float(rng.exponential(mean_gap))
    while t < horizon_s:
        times.append(t)
        t += float(rng.exponential(mean_gap))
    return np.array(times, dtype=float)

class UploadTiming(NamedTuple):
    forward_us :SimTime
    ack_us :SimTime
    @property
    def total_us(self) -> SimTime:
        return self.forward_us + self.ack_us
    @property
    def total_ms(self) -> float:
        return to_ms(self.total_us)

def upload_A(device :int, target :int, spec :TaskSpec, net :Network) -> UploadTiming:
    """Timing of an upload of ``A`` from a device to a target: the transfer, then the acknowledgement."""
    return UploadTiming(
        forward_us = net.one_way_us(device, target, spec.payload_A_bytes),
        ack_us = net.one_way_us(target, device) )
