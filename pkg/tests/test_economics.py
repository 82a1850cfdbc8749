#!/usr/bin/env python3
"""Tests for oecsim.economics.

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
import unittest
import numpy as np
from oecsim.nodes import Lease
from oecsim.economics import (DemandSupplySnapshot, RewardQuote, VirtualCurrencyLedger, Credit, SpotMarket, Bid, Allocation,
                              EconomicsError, scarcity, compute_reward, credit_on_lease_close, update_spot_floor,
                              clear_spot_auction)

class TestEconomics(unittest.TestCase):

    def test_reward(self):
        self.assertEqual( compute_reward(DemandSupplySnapshot(0, 10, 20, 5), 1.0), RewardQuote(0, 2.0, 5) )
        self.assertEqual( compute_reward(DemandSupplySnapshot(1, 1500, 20), 2.0).rate, 0.2 )  # clamped low
        self.assertEqual( compute_reward(DemandSupplySnapshot(1, 1, 500), 2.0).rate, 20.0 )  # clamped high
        self.assertEqual( compute_reward(DemandSupplySnapshot(1, 0, 0), 1.0).rate, 10.0 )  # no supply
        self.assertEqual( scarcity(DemandSupplySnapshot(0, 4, 2), (0.5, 3)), 0.5 )
        self.assertEqual( scarcity(DemandSupplySnapshot(0, 0, 2), (0.5, 3)), 3 )
        with self.assertRaises(EconomicsError): compute_reward(DemandSupplySnapshot(0, 10, 20), 0)
        with self.assertRaises(EconomicsError): compute_reward(DemandSupplySnapshot(0, -1, 20), 1)
        with self.assertRaises(EconomicsError): compute_reward(DemandSupplySnapshot(0, 1, float('nan')), 1)

    def test_reward_monotonic(self):
        rng = np.random.default_rng(123)
        for _ in range(1000):
            supply, d1, d2 = rng.uniform(0, 100, 3)
            lo, hi = sorted((d1, d2))
            base = float(rng.uniform(0.1, 5))
            r_lo = compute_reward(DemandSupplySnapshot(0, supply, lo), base).rate
            r_hi = compute_reward(DemandSupplySnapshot(0, supply, hi), base).rate
            self.assertLessEqual( r_lo, r_hi )
            self.assertTrue( 0.1*base <= r_lo <= 10*base )
            # more supply never raises the rate
            self.assertGreaterEqual( r_hi, compute_reward(DemandSupplySnapshot(0, supply*2, hi), base).rate )

    def test_ledger(self):
        ledger = VirtualCurrencyLedger()
        good = Lease(lease_id=1, node_id=7, start=0, duration_ms=30_000, price_rate=2.0)
        with self.assertRaises(EconomicsError): credit_on_lease_close(ledger, good)  # still active
        good.expire(30_000_000)
        self.assertEqual( credit_on_lease_close(ledger, good), 1.0 )
        with self.assertRaises(EconomicsError): credit_on_lease_close(ledger, good)
        bad = Lease(lease_id=2, node_id=7, start=0, duration_ms=30_000, price_rate=2.0)
        bad.break_faulty(1_000)
        self.assertEqual( credit_on_lease_close(ledger, bad), 0.0 )
        other = Lease(lease_id=3, node_id=8, start=0, duration_ms=60_000, price_rate=0.5)
        other.expire(60_000_000)
        credit_on_lease_close(ledger, other)
        self.assertEqual( ledger.balances, { 7: 1.0, 8: 0.5 } )
        self.assertEqual( ledger.credit_log, [ Credit(7, 1, 1.0), Credit(7, 2, 0.0), Credit(8, 3, 0.5) ] )
        self.assertEqual( ledger.total_credited, 1.5 )
        self.assertEqual( ledger.total_balance, 1.5 )
        self.assertTrue( ledger.credited(2) )
        self.assertFalse( ledger.credited(4) )
        neg = Lease(lease_id=4, node_id=8, start=0, duration_ms=1_000, price_rate=-1.0)
        neg.expire(1_000_000)
        with self.assertRaises(EconomicsError): credit_on_lease_close(ledger, neg)

    def test_spot_floor(self):
        m = SpotMarket(base_floor=1.0)
        self.assertEqual( m.floor_price, 1.0 )
        self.assertEqual( update_spot_floor(m, DemandSupplySnapshot(0, 5, 20), 0.5), 2.5 )
        self.assertEqual( update_spot_floor(m, DemandSupplySnapshot(0, 5, 20), 1.0), 4.0 )
        self.assertEqual( update_spot_floor(m, DemandSupplySnapshot(0, 0, 20), 0.25), 5.5 )
        with self.assertRaises(EconomicsError): update_spot_floor(m, DemandSupplySnapshot(0, 5, 20), 0)
        with self.assertRaises(EconomicsError): update_spot_floor(m, DemandSupplySnapshot(0, 5, 20), 1.5)

    def test_auction(self):
        m = SpotMarket(base_floor=1.0, capacity=2, bids=[ Bid(1, 3.0), Bid(2, 0.5), Bid(4, 2.0), Bid(3, 2.0) ])
        self.assertEqual( clear_spot_auction(m), [ Allocation(1, 1, 3.0), Allocation(3, 1, 2.0) ] )
        # a bid that doesn't fit is skipped, later smaller bids may still fit
        m = SpotMarket(base_floor=1.0, capacity=2, bids=[ Bid(1, 5.0, 3), Bid(2, 4.0, 1), Bid(3, 3.0, 1) ])
        got = clear_spot_auction(m)
        self.assertEqual( got, [ Allocation(2, 1, 4.0), Allocation(3, 1, 3.0) ] )
        self.assertEqual( sum( a.payment for a in got ), 7.0 )
        self.assertEqual( clear_spot_auction(SpotMarket(capacity=0, bids=[Bid(1, 9.0)])), [] )
        self.assertEqual( clear_spot_auction(SpotMarket(floor_price=10, capacity=5, bids=[Bid(1, 9.0)])), [] )
        with self.assertRaises(EconomicsError): clear_spot_auction(SpotMarket(capacity=1, bids=[Bid(1, 1.0, 0)]))
        with self.assertRaises(EconomicsError): clear_spot_auction(SpotMarket(capacity=1, bids=[Bid(1, -1.0)]))
        with self.assertRaises(EconomicsError): clear_spot_auction(SpotMarket(capacity=-1))
        with self.assertRaises(EconomicsError): clear_spot_auction(SpotMarket(base_floor=-1))
        with self.assertRaises(EconomicsError): clear_spot_auction(SpotMarket(floor_price=-1))

    def test_auction_properties(self):
        rng = np.random.default_rng(456)
        for i in range(1000):
            nbids = int(rng.integers(0, 12))
            bids = [ Bid(b, float(p), int(q)) for b, p, q in
                     zip(range(nbids), rng.uniform(0, 4, nbids), rng.integers(1, 4, nbids), strict=True) ]
            m = SpotMarket(base_floor=float(rng.uniform(0, 3)), capacity=int(rng.integers(0, 10)), bids=bids)
            got = clear_spot_auction(m)
            self.assertLessEqual( sum( a.quantity for a in got ), m.capacity )
            self.assertTrue( all( a.price >= m.floor_price for a in got ), i )
            self.assertEqual( len({ a.bidder for a in got }), len(got) )

if __name__ == '__main__':  # pragma: no cover
    unittest.main()
