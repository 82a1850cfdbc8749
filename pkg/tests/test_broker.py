#!/usr/bin/env python3
"""Tests for oecsim.broker.

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
import unittest
from oecsim.engine import EventQueue, RngStream
from oecsim.network import CLOUD_ID, Topology, build_topology
from oecsim.nodes import NodeKind, NodeState, ServiceProfile, LeaseStatus, open_lease, on_disconnect
from oecsim.workload import Request
from oecsim.broker import (Broker, BrokerError, NodeOffer, DeploymentKind, SchedulingPolicy, RequestLogEntry,
                           attach_devices)

def make_nodes(topo :Topology) -> dict[int, NodeState]:
    nodes = { CLOUD_ID: NodeState(node_id=CLOUD_ID, kind=NodeKind.CLOUD_DATACENTER, zone_id=None,
                                  profile=ServiceProfile(servers=None)) }
    for f in topo.fogs:
        nodes[f] = NodeState(node_id=f, kind=NodeKind.DEDICATED_FOG, zone_id=topo.zone(f), profile=ServiceProfile())
    for p in topo.participants:
        nodes[p] = NodeState(node_id=p, kind=NodeKind.PARTICIPANT_DEVICE, zone_id=topo.zone(p), profile=ServiceProfile())
    return nodes

def register_all(broker :Broker, nodes :dict[int, NodeState], uptimes :dict[int, float]|None = None):
    for n, st in nodes.items():
        broker.register_and_profile(NodeOffer(n, st.kind, st.zone_id, st.profile), 0,
                                    mean_uptime_s = (uptimes or {}).get(n, 60.0) if st.kind.churns else None)

class TestBroker(unittest.TestCase):

    def setUp(self):
        # devices 1-4, fogs 5 and 6, participants 7 and 8; zone 0 holds 1, 2, 5, 7
        self.topo = build_topology(zones=2, devices_per_zone=2, fogs_per_zone=1, participants_per_zone=1)
        self.nodes = make_nodes(self.topo)

    def test_deployment_kind(self):
        self.assertEqual( DeploymentKind.from_string(' OEC '), DeploymentKind.OEC_CLOUD )
        self.assertEqual( DeploymentKind.from_string('fog'), DeploymentKind.DEDICATED_FOGS )
        self.assertEqual( DeploymentKind.from_string('Cloud'), DeploymentKind.CLOUD_ONLY )
        with self.assertRaises(ValueError): DeploymentKind.from_string('edge')

    def test_attach(self):
        rng = RngStream(0, "attach")
        att = attach_devices(self.topo, DeploymentKind.DEDICATED_FOGS, rng)
        self.assertEqual( sorted(att), [1, 2, 3, 4, 7, 8] )
        self.assertTrue( set(att.values()) <= {5, 6} )
        self.assertEqual( att, attach_devices(self.topo, DeploymentKind.DEDICATED_FOGS, RngStream(0, "attach")) )
        self.topo.with_attachment(att)
        cloud = attach_devices(self.topo, DeploymentKind.CLOUD_ONLY, rng)
        self.assertEqual( set(cloud.values()), {CLOUD_ID} )
        many = build_topology(zones=1, devices_per_zone=200, fogs_per_zone=2)
        self.assertEqual( set(attach_devices(many, DeploymentKind.OEC_CLOUD, rng).values()), {201, 202} )
        nofog = build_topology(zones=1, devices_per_zone=2)
        with self.assertRaises(BrokerError): attach_devices(nofog, DeploymentKind.DEDICATED_FOGS, rng)
        self.assertEqual( attach_devices(build_topology(zones=1, devices_per_zone=0, fogs_per_zone=1),
                                         DeploymentKind.DEDICATED_FOGS, rng), {} )

    def test_construction(self):
        with self.assertRaises(BrokerError): Broker(self.topo, self.nodes, pool=(5, CLOUD_ID))
        with self.assertRaises(BrokerError): Broker(self.topo, self.nodes, pool=(5,), policy=SchedulingPolicy.RANDOM_FEASIBLE)
        b = Broker(self.topo, self.nodes, pool=(6, 5))
        self.assertEqual( b.pool, (5, 6) )
        register_all(b, self.nodes)
        with self.assertRaises(BrokerError): b.register_and_profile(NodeOffer(5, NodeKind.DEDICATED_FOG, 0, ServiceProfile()), 0)
        b2 = Broker(self.topo, self.nodes, pool=())
        with self.assertRaises(BrokerError):
            b2.register_and_profile(NodeOffer(7, NodeKind.PARTICIPANT_DEVICE, 0, ServiceProfile()), 0)
        rec = b.db.records[7]
        self.assertEqual( (rec.configured_lifetime_ms, rec.predicted_lifetime_ms), (60_000, 60_000) )
        self.assertEqual( b.db.records[5].predicted_lifetime_ms, math.inf )

    def test_nearest_tier_first(self):
        b = Broker(self.topo, self.nodes, pool=self.topo.fogs, max_queue_length=1)
        register_all(b, self.nodes)
        self.assertEqual( b.select_target(1, 0), 5 )
        self.assertEqual( b.select_target(3, 0), 6 )
        self.assertEqual( b.select_target(1, 0, exclude=frozenset((5,))), 6 )
        self.assertEqual( b.select_target(1, 0, exclude=(5, 6)), CLOUD_ID )
        # a full queue makes a node unavailable
        self.nodes[5].queue.append(99)
        self.assertFalse( b.available(5) )
        self.assertEqual( b.select_target(1, 0), 6 )
        self.nodes[6].queue.append(98)
        self.assertEqual( b.select_target(1, 0), CLOUD_ID )
        # without a queue limit both fogs are candidates again, the nearer one wins
        unl = Broker(self.topo, self.nodes, pool=self.topo.fogs)
        register_all(unl, self.nodes)
        self.assertEqual( unl.select_target(1, 0), 5 )

    def test_participants(self):
        q = EventQueue()
        b = Broker(self.topo, self.nodes, pool=self.topo.participants)
        register_all(b, self.nodes)
        self.assertFalse( b.available(7) )  # no lease yet
        self.assertEqual( b.select_target(1, 0), CLOUD_ID )
        open_lease(self.nodes[7], 30_000, 1.0, 0, events=q, lease_id=1)
        open_lease(self.nodes[8], 30_000, 1.0, 0, events=q, lease_id=2)
        self.assertEqual( b.select_target(1, 0), 7 )
        self.assertEqual( b.select_target(4, 0), 8 )
        on_disconnect(self.nodes[7], 1_000)
        self.assertEqual( b.select_target(1, 1_000), 8 )
        on_disconnect(self.nodes[8], 1_000)
        self.assertEqual( b.select_target(1, 1_000), CLOUD_ID )

    def test_lifetime_aware(self):
        topo = build_topology(zones=1, devices_per_zone=1, fogs_per_zone=1, participants_per_zone=2)
        nodes = make_nodes(topo)
        q = EventQueue()
        for lid, p in enumerate(topo.participants):
            open_lease(nodes[p], 30_000, 1.0, 0, events=q, lease_id=lid)
        near = Broker(topo, nodes, pool=topo.participants)
        register_all(near, nodes, { 3: 60, 4: 120 })
        self.assertEqual( near.select_target(1, 0), 3 )
        life = Broker(topo, nodes, pool=topo.participants, policy=SchedulingPolicy.LIFETIME_AWARE)
        register_all(life, nodes, { 3: 60, 4: 120 })
        self.assertEqual( life.select_target(1, 0), 4 )
        # the queue length still comes first
        nodes[4].queue.append(1)
        self.assertEqual( life.select_target(1, 0), 3 )

    def test_other_policies(self):
        b = Broker(self.topo, self.nodes, pool=self.topo.fogs, policy=SchedulingPolicy.CLOUD_ONLY)
        register_all(b, self.nodes)
        self.assertEqual( b.select_target(1, 0), CLOUD_ID )
        r = Broker(self.topo, self.nodes, pool=self.topo.fogs, policy=SchedulingPolicy.RANDOM_FEASIBLE, rng=RngStream(0, "p"))
        register_all(r, self.nodes)
        picks = { r.select_target(1, 0) for _ in range(200) }
        self.assertEqual( picks, {5, 6, CLOUD_ID} )
        self.assertEqual( { r.select_target(1, 0, exclude=(5, 6)) for _ in range(20) }, {CLOUD_ID} )

    def test_assign_and_failure(self):
        b = Broker(self.topo, self.nodes, pool=self.topo.fogs)
        register_all(b, self.nodes)
        req = Request(request_id=1, device_id=1, created_at=100)
        b.assign(req, 5, 100)
        self.assertEqual( b.handle_failure(req, 5, 200), 6 )
        self.assertEqual( b.handle_failure(req, 6, 300), 5 )
        self.assertEqual( req.retry_count, 2 )
        self.assertEqual( req.created_at, 100 )
        self.assertEqual( b.db.request_log, [ RequestLogEntry(100, 1, 1, 5, 1), RequestLogEntry(200, 1, 1, 6, 2),
                                              RequestLogEntry(300, 1, 1, 5, 3) ] )
        with self.assertRaises(BrokerError): b.assign(req, 42, 400)

    def test_leases_and_monitoring(self):
        q = EventQueue()
        b = Broker(self.topo, self.nodes, pool=self.topo.participants)
        register_all(b, self.nodes)
        rec = b.db.records[7]
        self.assertEqual( rec.reliability, 1.0 )
        self.assertEqual( rec.availability, 1.0 )
        l1 = open_lease(self.nodes[7], 1_000, 1.0, 0, events=q, lease_id=1)
        b.record_lease(l1)
        self.assertIs( rec.lease, l1 )
        with self.assertRaises(BrokerError): b.record_lease_close(l1)
        l1.expire(1_000_000)
        b.record_lease_close(l1)
        l2 = open_lease(self.nodes[7], 1_000, 1.0, 1_000_000, events=q, lease_id=2)
        b.record_lease(l2)
        on_disconnect(self.nodes[7], 1_500_000)
        b.record_lease_close(l2)
        self.assertEqual( (rec.leases_expired, rec.leases_broken), (1, 1) )
        self.assertEqual( rec.reliability, 0.5 )
        self.assertEqual( b.db.lease_counts(), { LeaseStatus.ACTIVE: 0, LeaseStatus.EXPIRED: 1, LeaseStatus.BROKEN_FAULTY: 1 } )
        # availability history and predicted lifetime
        b.record_monitoring_sample(8, 1_000_000, 0.25, True)
        b.record_monitoring_sample(8, 2_000_000, 0.0, False)
        self.assertEqual( b.db.records[8].predicted_lifetime_ms, 60_000 )
        b.record_monitoring_sample(8, 3_000_000, 0.0, True)
        b.record_monitoring_sample(8, 7_000_000, 0.0, False)
        rec8 = b.db.records[8]
        self.assertEqual( rec8.up_intervals, [2_000_000, 4_000_000] )
        self.assertEqual( rec8.predicted_lifetime_ms, 3_000 )
        self.assertEqual( rec8.availability, 0.5 )
        self.assertEqual( len(b.db.samples), 4 )
        self.assertEqual( b.db.samples[0].utilization, 0.25 )

if __name__ == '__main__':  # pragma: no cover
    unittest.main()
