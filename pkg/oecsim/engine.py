#!/usr/bin/env python3
"""Discrete-event engine: simulated clock, event queue, and named random streams.

Simulated time is kept in integer microseconds (:data:`SimTime`); every sampled
duration is converted with :func:`to_us`, which rounds half up. Events are
delivered in ``(fire_at, seq)`` order, where ``seq`` is the insertion counter,
so simultaneous events are delivered first-in first-out.

Random streams are NumPy ``Generator`` objects on the PCG64 bit generator
(128-bit state). A stream is derived from a 64-bit master seed and a text label:
the label's SHA-256 digest is split into eight little-endian 32-bit words that
become the ``spawn_key`` of a ``SeedSequence`` whose entropy is the master seed.
The same ``(master_seed, label)`` therefore always yields the same sequence.

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
import heapq
import hashlib
from enum import Enum
from itertools import count
from typing import NamedTuple, Optional, Any
import numpy as np

SimTime = int
"""Microseconds since the start of a run."""

MAX_SEED = 2**64 - 1

def to_us(ms :float) -> SimTime:
    """Convert a duration in milliseconds to whole microseconds, rounding half up."""
    return math.floor(ms * 1000 + 0.5)

def to_ms(us :SimTime) -> float:
    return us / 1000

class SchedulingError(RuntimeError): pass

class EventKind(Enum):
    ARRIVAL = 1
    SEND_COMPLETE = 2
    SERVICE_COMPLETE = 3
    CHURN_DOWN = 4
    CHURN_UP = 5
    LEASE_EXPIRY = 6
    MONITOR_TICK = 7

class Event(NamedTuple):
    """A scheduled event. ``(fire_at, seq)`` is unique, so comparisons never reach ``kind``."""
    fire_at :SimTime
    seq :int
    kind :EventKind
    target :Optional[int]
    data :Any = None

class TraceEntry(NamedTuple):
    fire_at :SimTime
    seq :int
    kind :EventKind
    target :Optional[int]

class EventQueue:
    """A priority queue of :class:`Event`\\s that also owns the simulated clock.

    If ``trace`` is set, every popped event is recorded in :attr:`trace`."""

    def __init__(self, *, trace :bool = False):
        self._heap :list[Event] = []
        self._seq = count()
        self.now :SimTime = 0
        self.trace :Optional[list[TraceEntry]] = [] if trace else None

    def __len__(self):
        return len(self._heap)

    def schedule(self, fire_at :SimTime, kind :EventKind, target :Optional[int] = None, data :Any = None) -> Event:
        """Schedule an event; it will be returned by :meth:`pop_next` exactly once."""
        if fire_at < self.now:
            raise SchedulingError(f"can't schedule {kind.name} at {fire_at}us, clock is already at {self.now}us")
        ev = Event(fire_at=int(fire_at), seq=next(self._seq), kind=kind, target=target, data=data)
        heapq.heappush(self._heap, ev)
        return ev

    def pop_next(self) -> Optional[Event]:
        """Remove and return the next event and advance the clock to it; ``None`` when empty."""
        if not self._heap:
            return None
        ev = heapq.heappop(self._heap)
        self.now = ev.fire_at
        if self.trace is not None:
            self.trace.append(TraceEntry(ev.fire_at, ev.seq, ev.kind, ev.target))
        return ev

def _spawn_key(label :str) -> tuple[int, ...]:
    digest = hashlib.sha256(label.encode('UTF-8')).digest()
    return tuple( int.from_bytes(digest[i:i+4], 'little') for i in range(0, len(digest), 4) )

class RngStream:
    """A reproducible random stream identified by a master seed and a label."""

    def __init__(self, master_seed :int, label :str):
        if not label:
            raise ValueError("stream label must not be empty")
        if not 0 <= master_seed <= MAX_SEED:
            raise ValueError(f"master seed must be a 64-bit unsigned integer, not {master_seed!r}")
        self.master_seed = master_seed
        self.label = label
        self._seedseq = np.random.SeedSequence(entropy=master_seed, spawn_key=_spawn_key(label))
        self.gen = np.random.Generator(np.random.PCG64(self._seedseq))

    def __repr__(self):
        return f"{type(self).__name__}({self.master_seed!r}, {self.label!r})"

    @property
    def seed(self) -> int:
        """A 64-bit number identifying this stream, e.g. for reporting."""
        return int(self._seedseq.generate_state(1, np.uint64)[0])

    def uniform(self, low :float = 0.0, high :float = 1.0, size=None):
        return self.gen.uniform(low, high, size)

    def normal(self, mean :float, deviation :float, size=None):
        return self.gen.normal(mean, deviation, size)

    def exponential(self, mean :float, size=None):
        return self.gen.exponential(mean, size)

    def integers(self, low :int, high :int, size=None):
        """Integers in ``[low, high)``."""
        return self.gen.integers(low, high, size)

def derive_stream(master_seed :int, label :str) -> RngStream:
    """Derive the stream for ``label``; a pure function of its two arguments."""
    return RngStream(master_seed, label)
