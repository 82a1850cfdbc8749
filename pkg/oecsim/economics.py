#!/usr/bin/env python3
"""Incentives and pricing: scarcity-based reward rates, the virtual-currency
ledger, and a spot market with a dynamic floor price.

All three rules are model choices with their parameters in the scenario
configuration:

- reward rate = ``base_rate × clamp(demand / supply, clamp_min, clamp_max)``,
  with zero supply counting as maximum scarcity;
- spot floor = exponentially weighted moving average toward
  ``base_floor × clamp(demand / supply, ...)``;
- auction = greedy pay-as-bid: bids sorted by price (descending, ties by bidder
  id) are accepted while they fit the remaining capacity, a bid that doesn't fit
  is skipped, and clearing stops at the first bid below the floor.

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
from dataclasses import dataclass, field
from typing import NamedTuple, Optional
import sys
if sys.version_info >= (3, 11):
    from typing import Self
else:  # pragma: no cover
    from typing_extensions import Self
from .engine import SimTime
from .nodes import Lease, LeaseStatus

DEFAULT_CLAMP = (0.1, 10.0)

class EconomicsError(ValueError): pass

class DemandSupplySnapshot(NamedTuple):
    """Requests per second demanded by a zone's devices versus what its connected pool can serve."""
    zone_id :int
    supplied_capacity :float
    demanded_capacity :float
    timestamp :SimTime = 0
    def validate(self) -> Self:
        if not ( self.supplied_capacity >= 0 and self.demanded_capacity >= 0 ):
            raise EconomicsError(f"capacities must not be negative: {self!r}")
        return self

class RewardQuote(NamedTuple):
    zone_id :int
    rate :float  # currency per minute
    timestamp :SimTime

def scarcity(snap :DemandSupplySnapshot, clamp :tuple[float, float] = DEFAULT_CLAMP) -> float:
    """The demand/supply ratio clamped to ``clamp``; no supply counts as the upper bound."""
    lo, hi = clamp
    snap.validate()
    if snap.supplied_capacity == 0:
        return hi
    return min(max(snap.demanded_capacity / snap.supplied_capacity, lo), hi)

def compute_reward(snap :DemandSupplySnapshot, base_rate :float, *, clamp :tuple[float, float] = DEFAULT_CLAMP) -> RewardQuote:
    if not base_rate > 0:
        raise EconomicsError("base_rate must be > 0")
    return RewardQuote(zone_id=snap.zone_id, rate=base_rate * scarcity(snap, clamp), timestamp=snap.timestamp)

class Credit(NamedTuple):
    node_id :int
    lease_id :int
    amount :float

@dataclass
class VirtualCurrencyLedger:
    """Participant balances; currency only enters through :func:`credit_on_lease_close`."""
    balances :dict[int, float] = field(default_factory=dict)
    credit_log :list[Credit] = field(default_factory=list)
    @property
    def total_credited(self) -> float:
        return math.fsum( c.amount for c in self.credit_log )
    @property
    def total_balance(self) -> float:
        return math.fsum(self.balances.values())
    def credited(self, lease_id :int) -> bool:
        return any( c.lease_id == lease_id for c in self.credit_log )

def credit_on_lease_close(ledger :VirtualCurrencyLedger, lease :Lease) -> float:
    """Pay a participant for a closed lease: the full price if it expired, nothing if it broke."""
    match lease.status:
        case LeaseStatus.EXPIRED: amount = lease.price_rate * lease.duration_minutes
        case LeaseStatus.BROKEN_FAULTY: amount = 0.0
        case _: raise EconomicsError(f"lease {lease.lease_id} is {lease.status.name}, only closed leases are credited")
    if amount < 0:
        raise EconomicsError(f"lease {lease.lease_id} has a negative price")
    if ledger.credited(lease.lease_id):
        raise EconomicsError(f"lease {lease.lease_id} was already credited")
    ledger.balances[lease.node_id] = ledger.balances.get(lease.node_id, 0.0) + amount
    ledger.credit_log.append(Credit(node_id=lease.node_id, lease_id=lease.lease_id, amount=amount))
    return amount

class Bid(NamedTuple):
    bidder :int
    price :float  # per slot
    quantity :int = 1

class Allocation(NamedTuple):
    bidder :int
    quantity :int
    price :float
    @property
    def payment(self) -> float:
        return self.price * self.quantity

@dataclass(kw_only=True)
class SpotMarket:
    base_floor :float = 1.0
    floor_price :Optional[float] = None
    capacity :int = 0
    bids :list[Bid] = field(default_factory=list)
    def __post_init__(self):
        if self.floor_price is None: self.floor_price = self.base_floor
    def validate(self) -> Self:
        if not self.base_floor >= 0: raise EconomicsError("base_floor must not be negative")
        if not self.floor_price >= 0: raise EconomicsError("floor_price must not be negative")
        if self.capacity < 0: raise EconomicsError("capacity must not be negative")
        for b in self.bids:
            if b.quantity < 1 or not b.price >= 0: raise EconomicsError(f"invalid bid {b!r}")
        return self

def update_spot_floor(market :SpotMarket, snap :DemandSupplySnapshot, alpha :float, *,
                      clamp :tuple[float, float] = DEFAULT_CLAMP) -> float:
    """Move the floor price toward the scarcity-scaled base floor, with smoothing factor ``alpha``."""
    if not 0 < alpha <= 1:
        raise EconomicsError("alpha must be in (0, 1]")
    target = market.base_floor * scarcity(snap, clamp)
    market.floor_price = (1 - alpha) * market.floor_price + alpha * target
    return market.floor_price

def clear_spot_auction(market :SpotMarket) -> list[Allocation]:
    """Clear the current bids; each accepted bid pays its own price."""
    market.validate()
    remaining = market.capacity
    accepted :list[Allocation] = []
    for bid in sorted(market.bids, key=lambda b: (-b.price, b.bidder)):
        if bid.price < market.floor_price: break
        if bid.quantity <= remaining:
            accepted.append(Allocation(bidder=bid.bidder, quantity=bid.quantity, price=bid.price))
            remaining -= bid.quantity
    return accepted
