#!/usr/bin/env python3
"""Tests for oecsim.nodes.

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
from statistics import fmean
from oecsim.engine import EventQueue, EventKind, RngStream
from oecsim.workload import Request
from oecsim.nodes import (NodeKind, NodeState, ServiceProfile, ChurnProcess, Lease, LeaseStatus, LeaseError, NodeStateError,
                          NodeDisconnectedError, CacheMissError, ServeError, ServiceSlot, open_lease, next_churn_transition,
                          on_disconnect, on_reconnect, serve)

def participant(node_id :int = 7, **kwargs) -> NodeState:
    return NodeState(node_id=node_id, kind=NodeKind.PARTICIPANT_DEVICE, zone_id=0, profile=ServiceProfile(), **kwargs)

class TestNodes(unittest.TestCase):

    def test_kinds(self):
        self.assertTrue( NodeKind.PARTICIPANT_DEVICE.churns )
        self.assertFalse( NodeKind.DEDICATED_FOG.churns )
        self.assertFalse( NodeKind.CLOUD_DATACENTER.churns )

    def test_lease(self):
        lease = Lease(lease_id=1, node_id=7, start=1_000_000, duration_ms=30_000, price_rate=2.0)
        self.assertEqual( lease.expiry, 31_000_000 )
        self.assertEqual( lease.duration_minutes, 0.5 )
        self.assertEqual( lease.status, LeaseStatus.ACTIVE )
        with self.assertRaises(LeaseError): lease.expire(30_999_999)
        with self.assertRaises(LeaseError): lease.break_faulty(31_000_000)
        self.assertIs( lease.expire(31_000_000), lease )
        self.assertEqual( lease.status, LeaseStatus.EXPIRED )
        self.assertEqual( lease.closed_at, 31_000_000 )
        with self.assertRaises(LeaseError): lease.expire(32_000_000)
        with self.assertRaises(LeaseError): lease.break_faulty(2_000_000)
        other = Lease(lease_id=2, node_id=7, start=0, duration_ms=1000, price_rate=1.0)
        other.break_faulty(999_999)
        self.assertEqual( other.status, LeaseStatus.BROKEN_FAULTY )
        with self.assertRaises(LeaseError): other.expire(1_000_000)
        with self.assertRaises(LeaseError): other.break_faulty(999_999)

    def test_open_lease(self):
        q = EventQueue()
        st = participant()
        self.assertFalse( st.leased )
        lease = open_lease(st, 30_000, 1.5, 0, events=q, lease_id=11)
        self.assertTrue( st.leased )
        self.assertIs( st.lease, lease )
        self.assertEqual( lease.price_rate, 1.5 )
        ev = q.pop_next()
        self.assertEqual( (ev.fire_at, ev.kind, ev.target, ev.data), (30_000_000, EventKind.LEASE_EXPIRY, 7, 11) )
        with self.assertRaises(LeaseError): open_lease(st, 30_000, 1.5, 0, events=q, lease_id=12)
        with self.assertRaises(LeaseError): open_lease(participant(8), 0, 1.5, 0, events=q, lease_id=13)
        fog = NodeState(node_id=5, kind=NodeKind.DEDICATED_FOG, zone_id=0, profile=ServiceProfile())
        with self.assertRaises(LeaseError): open_lease(fog, 30_000, 1.5, 0, events=q, lease_id=14)

    def test_serve(self):
        st = participant()
        r1 = Request(request_id=1, device_id=1, created_at=0)
        r2 = Request(request_id=2, device_id=1, created_at=0)
        r3 = Request(request_id=3, device_id=2, created_at=0)
        with self.assertRaises(CacheMissError): serve(st, st.profile, r1, 0)
        self.assertFalse( st.has_A(1) )
        st.store_A(1)
        self.assertTrue( st.has_A(1) )
        self.assertFalse( st.has_A(2) )
        # first request pays the factorization, the second one waits for the first
        self.assertEqual( serve(st, st.profile, r1, 1_000), ServiceSlot(1_000, 11_000, True) )
        self.assertEqual( serve(st, st.profile, r2, 2_000), ServiceSlot(11_000, 13_000, False) )
        self.assertEqual( list(st.queue), [1, 2] )
        self.assertEqual( st.busy_us, 12_000 )
        # the cache is per tenant
        st.store_A(2)
        self.assertEqual( serve(st, st.profile, r3, 20_000), ServiceSlot(20_000, 30_000, True) )
        with self.assertRaises(ServeError):
            on_disconnect(st, 25_000)
            serve(st, st.profile, r1, 26_000)

    def test_unlimited_servers(self):
        cloud = NodeState(node_id=0, kind=NodeKind.CLOUD_DATACENTER, zone_id=None, profile=ServiceProfile(servers=None))
        cloud.store_A(1)
        cloud.store_A(2)
        slots = [ serve(cloud, cloud.profile, Request(request_id=i, device_id=1 + i % 2, created_at=0), 0) for i in range(4) ]
        self.assertEqual( slots, [ ServiceSlot(0, 10_000, True), ServiceSlot(0, 10_000, True),
                                   ServiceSlot(0, 2_000, False), ServiceSlot(0, 2_000, False) ] )
        self.assertEqual( cloud.busy_until, 0 )
        with self.assertRaises(NodeStateError): on_disconnect(cloud, 0)

    def test_disconnect(self):
        q = EventQueue()
        st = participant()
        lease = open_lease(st, 30_000, 1.0, 0, events=q, lease_id=1)
        st.store_A(1)
        serve(st, st.profile, Request(request_id=5, device_id=1, created_at=0), 0)
        serve(st, st.profile, Request(request_id=6, device_id=1, created_at=0), 0)
        self.assertEqual( on_disconnect(st, 4_000), {5, 6} )
        self.assertFalse( st.connected )
        self.assertEqual( st.epoch, 1 )
        self.assertEqual( len(st.queue), 0 )
        self.assertFalse( st.has_A(1) )
        self.assertEqual( lease.status, LeaseStatus.BROKEN_FAULTY )
        self.assertEqual( lease.closed_at, 4_000 )
        self.assertFalse( st.leased )
        with self.assertRaises(NodeStateError): on_disconnect(st, 5_000)
        with self.assertRaises(NodeDisconnectedError): st.store_A(1)
        with self.assertRaises(NodeDisconnectedError):
            serve(st, st.profile, Request(request_id=7, device_id=1, created_at=0), 5_000)
        on_reconnect(st, 9_000)
        self.assertTrue( st.connected )
        self.assertEqual( st.up_since, 9_000 )
        self.assertEqual( st.busy_until, 9_000 )
        self.assertFalse( st.has_A(1) )  # the cache stays cold
        with self.assertRaises(NodeStateError): on_reconnect(st, 10_000)
        # a lease that has run its full duration isn't broken by a disconnect at its expiry
        st2 = participant(8)
        lease2 = open_lease(st2, 1_000, 1.0, 0, events=q, lease_id=2)
        self.assertEqual( on_disconnect(st2, 1_000_000), set() )
        self.assertEqual( lease2.status, LeaseStatus.ACTIVE )

    def test_churn(self):
        churn = ChurnProcess()
        self.assertIs( churn.validate(), churn )
        rng = RngStream(0, "churn")
        ups = [ next_churn_transition(churn, True, rng) for _ in range(20_000) ]
        downs = [ next_churn_transition(churn, False, rng) for _ in range(20_000) ]
        self.assertTrue( all( x > 0 for x in ups + downs ) )
        self.assertAlmostEqual( fmean(ups), 60, delta=2 )
        self.assertAlmostEqual( fmean(downs), 10, delta=0.4 )
        with self.assertRaises(ValueError): ChurnProcess(mean_uptime_s=0).validate()
        with self.assertRaises(ValueError): ChurnProcess(mean_downtime_s=-1).validate()

    def test_profile(self):
        self.assertEqual( ServiceProfile().validate().servers, 1 )
        with self.assertRaises(ValueError): ServiceProfile(solve_time_ms=0).validate()
        with self.assertRaises(ValueError): ServiceProfile(factorization_time_ms=0).validate()
        with self.assertRaises(ValueError): ServiceProfile(servers=4).validate()

if __name__ == '__main__':  # pragma: no cover
    unittest.main()
