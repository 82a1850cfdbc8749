#!/usr/bin/env python3
"""One simulation run: the event handlers that tie network, nodes, broker,
economics, and workload together.

A run goes through these phases:

1. The topology is built and the endpoints are randomly attached to fogs (or
   the cloud), every compute node registers with the broker, participants are
   offered leases, and churn and monitoring events are scheduled.
2. Every device uploads its matrix ``A`` to the node the broker selects. Once
   the upload is acknowledged, the device starts sending requests at Poisson
   arrival times until the horizon.
3. A request goes to the node the broker selects; if that node doesn't hold the
   device's matrix, the request first re-uploads it. A request that reaches a
   disconnected node, or that is queued on a node when it disconnects, is
   reassigned by the broker, its processing time keeps running.
4. After the horizon, no new requests, churn, or monitoring events are created,
   and the run continues until all requests have completed and all leases have
   expired or broken.

Random streams are derived from the scenario's master seed with labels below
``run<i>/``: ``attach``, ``latency``, ``policy``, ``spot``, ``reserve``,
``arrivals/d<device>``, and ``churn/z<zone>/p<k>``.

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
from itertools import count
from dataclasses import dataclass, replace
from typing import NamedTuple, Optional
from .engine import SimTime, EventQueue, EventKind, Event, TraceEntry, RngStream, derive_stream, to_us
from .network import build_topology, classify, Network, UnknownNodeError
from .nodes import NodeKind, NodeState, Lease, LeaseStatus, ServeError, open_lease, next_churn_transition, \
    on_disconnect, on_reconnect, serve
from .broker import Broker, NodeOffer, DeploymentKind, RequestLogEntry, MonitoringSample, attach_devices
from .economics import DemandSupplySnapshot, VirtualCurrencyLedger, SpotMarket, Bid, compute_reward, \
    credit_on_lease_close, update_spot_floor, clear_spot_auction
from .workload import Request, RequestOutcome, generate_arrivals, upload_A
from .config import ScenarioConfig

class ConservationError(RuntimeError): pass

class LegKind(Enum):
    UPLOAD = 1  # A, device to node
    ACK = 2     # upload acknowledgement, node to device
    REQUEST = 3 # b, device to node

class Message(NamedTuple):
    leg :LegKind
    device_id :int
    node_id :int
    epoch :int  # of the node when the message was sent
    request_id :Optional[int]  # None for a device's initial upload
    ack_us :SimTime = 0

class ServiceRecord(NamedTuple):
    node_id :int
    device_id :int
    request_id :int
    epoch :int
    start :SimTime
    completion :SimTime
    cold :bool

class RewardPoint(NamedTuple):
    at :SimTime
    zone_id :int
    supply_rps :float
    demand_rps :float
    reward_rate :float
    spot_floor :float
    spot_accepted :int
    spot_revenue :float

class DisconnectRecord(NamedTuple):
    at :SimTime
    node_id :int

@dataclass(kw_only=True)
class RunResult:
    """Everything one run produced; ``outcomes`` are sorted by request id."""
    run_index :int
    deployment :DeploymentKind
    seed :int
    outcomes :list[RequestOutcome]
    upload_times_us :dict[int, SimTime]
    requests_generated :int
    disconnects :list[DisconnectRecord]
    leases :list[Lease]
    ledger :VirtualCurrencyLedger
    reward_series :list[RewardPoint]
    assignment_log :list[RequestLogEntry]
    service_log :list[ServiceRecord]
    samples :list[MonitoringSample]
    trace :Optional[list[TraceEntry]] = None
    @property
    def retries(self) -> int:
        return sum( o.retries for o in self.outcomes )
    @property
    def broken_leases(self) -> int:
        return sum( 1 for lease in self.leases if lease.status == LeaseStatus.BROKEN_FAULTY )
    @property
    def credited_currency(self) -> float:
        return self.ledger.total_credited

class Simulation:
    """A single run of a scenario. ``arrivals=False`` disables the Poisson
    arrivals, so that only requests added with :meth:`inject_request` are sent."""

    def __init__(self, cfg :ScenarioConfig, run_index :int = 0, *, trace :bool = False, arrivals :bool = True):
        self.cfg = cfg
        self.run_index = run_index
        self._label = f"run{run_index}"
        self.seed = derive_stream(cfg.master_seed, self._label).seed
        self.horizon :SimTime = to_us(cfg.horizon_s * 1000)
        self.events = EventQueue(trace=trace)
        self._arrivals = arrivals
        self._started = False

        topo = build_topology(zones=cfg.zones, devices_per_zone=cfg.devices_per_zone,
                              fogs_per_zone=cfg.fogs_present_per_zone, participants_per_zone=cfg.participants_present_per_zone)
        self.topo = topo.with_attachment(attach_devices(topo, cfg.deployment, self.stream('attach')))
        self.net = Network(self.topo, cfg.latency, self.stream('latency'), bandwidth_bytes_per_s=cfg.bandwidth_bytes_per_s)

        cloud = self.topo.cloud_id
        self.nodes :dict[int, NodeState] = { cloud: NodeState(node_id=cloud, kind=NodeKind.CLOUD_DATACENTER, zone_id=None,
                                                              profile=replace(cfg.service, servers=None)) }
        for f in self.topo.fogs:
            self.nodes[f] = NodeState(node_id=f, kind=NodeKind.DEDICATED_FOG, zone_id=self.topo.zone(f), profile=cfg.service)
        for p in self.topo.participants:
            self.nodes[p] = NodeState(node_id=p, kind=NodeKind.PARTICIPANT_DEVICE, zone_id=self.topo.zone(p), profile=cfg.service)
        match cfg.deployment:
            case DeploymentKind.CLOUD_ONLY: pool :tuple[int, ...] = ()
            case DeploymentKind.DEDICATED_FOGS: pool = self.topo.fogs
            case DeploymentKind.OEC_CLOUD:
                pool = self.topo.participants + ( self.topo.fogs if cfg.oec_fogs_compute else () )
            case _: raise ValueError(f"unhandled deployment {cfg.deployment!r}")  # pragma: no cover
        self.broker = Broker(self.topo, self.nodes, pool=pool, policy=cfg.broker.policy, rng=self.stream('policy'),
                             max_queue_length=cfg.broker.max_queue_length)
        for n, st in self.nodes.items():
            self.broker.register_and_profile(NodeOffer(n, st.kind, st.zone_id, st.profile), 0,
                                             mean_uptime_s = cfg.churn.mean_uptime_s if st.kind.churns else None)

        self.requests :dict[int, Request] = {}
        self.outcomes :list[RequestOutcome] = []
        self.upload_times_us :dict[int, SimTime] = {}
        self.disconnects :list[DisconnectRecord] = []
        self.service_log :list[ServiceRecord] = []
        self.reward_series :list[RewardPoint] = []
        self.ledger = VirtualCurrencyLedger()
        self.leases :dict[int, Lease] = {}
        self._request_ids = count(1)
        self._lease_ids = count(1)
        self._monitor_us :SimTime = to_us(cfg.broker.monitor_interval_s * 1000)
        self._last_busy_us :dict[int, SimTime] = { n: 0 for n in self.nodes }
        self._churn_rngs :dict[int, RngStream] = {}
        self.economics_active = cfg.deployment == DeploymentKind.OEC_CLOUD
        self.quotes :dict[int, float] = {}
        self.markets :dict[int, SpotMarket] = { z.zone_id: SpotMarket(base_floor=cfg.economics.base_floor) for z in self.topo.zones }
        self._spot_rng = self.stream('spot')
        self.reserve_rates :dict[int, float] = {}
        if cfg.economics.gates_supply:
            reserve_rng = self.stream('reserve')
            for p in self.topo.participants:
                self.reserve_rates[p] = cfg.economics.reserve_rate * float(reserve_rng.uniform(0.5, 1.5))
        self._handlers = {
            EventKind.ARRIVAL: self._on_arrival,
            EventKind.SEND_COMPLETE: self._on_send_complete,
            EventKind.SERVICE_COMPLETE: self._on_service_complete,
            EventKind.CHURN_DOWN: self._on_churn_down,
            EventKind.CHURN_UP: self._on_churn_up,
            EventKind.LEASE_EXPIRY: self._on_lease_expiry,
            EventKind.MONITOR_TICK: self._on_monitor_tick,
        }

    def stream(self, name :str) -> RngStream:
        return derive_stream(self.cfg.master_seed, f"{self._label}/{name}")

    @property
    def now(self) -> SimTime:
        return self.events.now

    def inject_request(self, device_id :int, at :SimTime):
        """Schedule an additional request from ``device_id`` at time ``at``."""
        if device_id not in self.topo.devices:
            raise UnknownNodeError(device_id)
        self.events.schedule(at, EventKind.ARRIVAL, device_id)

    def inject_disconnect(self, node_id :int, at :SimTime, downtime :SimTime):
        """Schedule a disconnect of a participant at ``at`` and its reconnect ``downtime`` later.

        Only available when random churn is disabled."""
        if self.cfg.churn_active:
            raise RuntimeError("scripted disconnects need churn to be disabled")
        if node_id not in self.topo.participants:
            raise UnknownNodeError(node_id)
        self.events.schedule(at, EventKind.CHURN_DOWN, node_id, downtime)

    # ----- run -----

    def run(self) -> RunResult:
        if self._started:
            raise RuntimeError("a simulation can only be run once")
        self._started = True
        self._setup()
        while (ev := self.events.pop_next()) is not None:
            self._handlers[ev.kind](ev)
        return self._finish()

    def _setup(self):
        if self.economics_active:
            self._update_economics(spot=False)
        for p in self.topo.participants:
            self._offer_lease(p)
        if self.cfg.churn_active:
            for z in self.topo.zones:
                for k, p in enumerate( m for m in z.members if m in self.topo.participants ):
                    self._churn_rngs[p] = self.stream(f"churn/z{z.zone_id}/p{k}")
                    self._schedule_churn(p, up=True)
        if self._monitor_us < self.horizon:
            self.events.schedule(self._monitor_us, EventKind.MONITOR_TICK)
        for d in self.topo.devices:
            self._start_upload(d, self.broker.select_target(d, self.now), request=None)

    def _finish(self) -> RunResult:
        if len(self.outcomes) != len(self.requests):
            raise ConservationError(f"{len(self.requests)} requests generated but {len(self.outcomes)} completed")
        if len(self.upload_times_us) != len(self.topo.devices):
            raise ConservationError("not all uploads completed")
        counts = self.broker.db.lease_counts()
        if counts[LeaseStatus.ACTIVE] or sum(counts.values()) != len(self.leases):
            raise ConservationError(f"lease accounting mismatch: {counts} vs. {len(self.leases)} opened")
        if not math.isclose(self.ledger.total_balance, self.ledger.total_credited, abs_tol=1e-9):
            raise ConservationError("ledger balances don't match the credits issued")
        return RunResult(
            run_index = self.run_index,
            deployment = self.cfg.deployment,
            seed = self.seed,
            outcomes = sorted(self.outcomes, key=lambda o: o.request_id),
            upload_times_us = dict(sorted(self.upload_times_us.items())),
            requests_generated = len(self.requests),
            disconnects = self.disconnects,
            leases = list(self.leases.values()),
            ledger = self.ledger,
            reward_series = self.reward_series,
            assignment_log = self.broker.db.request_log,
            service_log = self.service_log,
            samples = self.broker.db.samples,
            trace = self.events.trace )

    # ----- workload -----

    def _start_upload(self, device :int, node :int, *, request :Optional[Request]):
        timing = upload_A(device, node, self.cfg.task, self.net)
        msg = Message(leg=LegKind.UPLOAD, device_id=device, node_id=node, epoch=self.nodes[node].epoch,
                      request_id=None if request is None else request.request_id, ack_us=timing.ack_us)
        self.events.schedule(self.now + timing.forward_us, EventKind.SEND_COMPLETE, node, msg)

    def _send_request(self, req :Request, node :int, epoch :int):
        delay = self.net.one_way_us(req.device_id, node, self.cfg.task.payload_b_bytes)
        msg = Message(leg=LegKind.REQUEST, device_id=req.device_id, node_id=node, epoch=epoch, request_id=req.request_id)
        self.events.schedule(self.now + delay, EventKind.SEND_COMPLETE, node, msg)

    def run_request_lifecycle(self, req :Request, node :int):
        """Send a request to its assigned node, uploading the device's matrix first if the node lacks it.

        The lifecycle continues in the event handlers until the reply is sent."""
        st = self.nodes[node]
        if st.has_A(req.device_id):
            self._send_request(req, node, st.epoch)
        else:
            self._start_upload(req.device_id, node, request=req)

    def _fail_request(self, req :Request, node :int):
        self.run_request_lifecycle(req, self.broker.handle_failure(req, node, self.now))

    def _start_arrivals(self, device :int):
        remaining_s = max(self.cfg.horizon_s - self.now / 1_000_000, 0.0)
        for t in generate_arrivals(self.cfg.arrival_rate_per_s, remaining_s, self.stream(f"arrivals/d{device}")):
            at = self.now + to_us(t * 1000)
            if at < self.horizon:
                self.events.schedule(at, EventKind.ARRIVAL, device)

    def _on_arrival(self, ev :Event):
        device = ev.target
        req = Request(request_id=next(self._request_ids), device_id=device, created_at=self.now)
        self.requests[req.request_id] = req
        node = self.broker.select_target(device, self.now)
        self.broker.assign(req, node, self.now)
        self.run_request_lifecycle(req, node)

    def _on_send_complete(self, ev :Event):
        msg :Message = ev.data
        match msg.leg:
            case LegKind.UPLOAD:
                st = self.nodes[msg.node_id]
                if not st.connected or st.epoch != msg.epoch:
                    if msg.request_id is None:
                        target = self.broker.select_target(msg.device_id, self.now, exclude=frozenset((msg.node_id,)))
                        self._start_upload(msg.device_id, target, request=None)
                    else:
                        self._fail_request(self.requests[msg.request_id], msg.node_id)
                    return
                st.store_A(msg.device_id)
                self.events.schedule(self.now + msg.ack_us, EventKind.SEND_COMPLETE, msg.device_id, msg._replace(leg=LegKind.ACK))
            case LegKind.ACK:
                if msg.request_id is None:
                    self.upload_times_us[msg.device_id] = self.now
                    if self._arrivals: self._start_arrivals(msg.device_id)
                else:
                    self._send_request(self.requests[msg.request_id], msg.node_id, msg.epoch)
            case LegKind.REQUEST:
                st = self.nodes[msg.node_id]
                req = self.requests[msg.request_id]
                if st.epoch != msg.epoch:
                    self._fail_request(req, msg.node_id)
                    return
                try:
                    slot = serve(st, st.profile, req, self.now)
                except ServeError:
                    self._fail_request(req, msg.node_id)
                    return
                self.service_log.append(ServiceRecord(node_id=st.node_id, device_id=req.device_id, request_id=req.request_id,
                                        epoch=st.epoch, start=slot.start, completion=slot.completion, cold=slot.cold))
                self.events.schedule(slot.completion, EventKind.SERVICE_COMPLETE, st.node_id, (req.request_id, st.epoch))
            case _: raise ValueError(f"unhandled leg {msg.leg!r}")  # pragma: no cover

    def _on_service_complete(self, ev :Event):
        node = ev.target
        request_id, epoch = ev.data
        st = self.nodes[node]
        if st.epoch != epoch: return  # the request already failed over when the node disconnected
        st.queue.remove(request_id)
        req = self.requests[request_id]
        reply = self.net.one_way_us(node, req.device_id, self.cfg.task.payload_x_bytes)
        self.outcomes.append(RequestOutcome(request_id=request_id, device_id=req.device_id, created_at=req.created_at,
                             completed_at=self.now + reply, served_by=node, tier=classify(req.device_id, node, self.topo),
                             retries=req.retry_count))

    # ----- churn and leases -----

    def _schedule_churn(self, node :int, *, up :bool):
        delay = to_us( next_churn_transition(self.cfg.churn.process, up, self._churn_rngs[node]) * 1000 )
        if self.now + delay < self.horizon:
            self.events.schedule(self.now + delay, EventKind.CHURN_DOWN if up else EventKind.CHURN_UP, node)

    def _on_churn_down(self, ev :Event):
        node, scripted_downtime = ev.target, ev.data
        st = self.nodes[node]
        lease = st.lease if st.leased else None
        failed = on_disconnect(st, self.now)
        self.disconnects.append(DisconnectRecord(self.now, node))
        if lease is not None and lease.status == LeaseStatus.BROKEN_FAULTY:
            self._close_lease(lease)
        for rid in sorted(failed):
            self._fail_request(self.requests[rid], node)
        if scripted_downtime is not None:
            self.events.schedule(self.now + scripted_downtime, EventKind.CHURN_UP, node)
        else:
            self._schedule_churn(node, up=False)

    def _on_churn_up(self, ev :Event):
        node = ev.target
        on_reconnect(self.nodes[node], self.now)
        if self.cfg.churn_active:
            self._schedule_churn(node, up=True)
        if self.now < self.horizon:
            self._offer_lease(node)

    def _offer_lease(self, node :int) -> Optional[Lease]:
        """Offer a lease at the zone's current reward rate; the participant may decline it if supply is gated."""
        st = self.nodes[node]
        rate = self.quotes.get(st.zone_id, self.cfg.economics.base_rate)
        if self.cfg.economics.gates_supply and rate < self.reserve_rates[node]:
            return None
        lease = open_lease(st, self.cfg.lease.duration_s * 1000, rate, self.now, events=self.events, lease_id=next(self._lease_ids))
        self.leases[lease.lease_id] = lease
        self.broker.record_lease(lease)
        return lease

    def _close_lease(self, lease :Lease):
        credit_on_lease_close(self.ledger, lease)
        self.broker.record_lease_close(lease)

    def _on_lease_expiry(self, ev :Event):
        lease = self.leases[ev.data]
        if lease.status != LeaseStatus.ACTIVE: return  # broken earlier
        lease.expire(self.now)
        self._close_lease(lease)
        st = self.nodes[ev.target]
        if st.connected and self.now < self.horizon:
            self._offer_lease(ev.target)

    # ----- monitoring and economics -----

    def _on_monitor_tick(self, _ev :Event):
        for n in sorted(self.nodes):
            st = self.nodes[n]
            util = min(max( (st.busy_us - self._last_busy_us[n]) / self._monitor_us, 0.0), 1.0)
            self._last_busy_us[n] = st.busy_us
            self.broker.record_monitoring_sample(n, self.now, util, st.connected)
        if self.economics_active:
            self._update_economics(spot=True)
            if self.cfg.economics.gates_supply:
                for p in self.topo.participants:
                    st = self.nodes[p]
                    if st.connected and not st.leased:
                        self._offer_lease(p)
        if self.now + self._monitor_us < self.horizon:
            self.events.schedule(self.now + self._monitor_us, EventKind.MONITOR_TICK)

    def _update_economics(self, *, spot :bool):
        eco = self.cfg.economics
        for z in self.topo.zones:
            parts = [ self.nodes[m] for m in z.members if m in self.topo.participants ]
            snap = DemandSupplySnapshot(
                zone_id = z.zone_id,
                supplied_capacity = sum( 1000 / st.profile.solve_time_ms for st in parts if st.connected ),
                demanded_capacity = self.cfg.devices_per_zone * self.cfg.arrival_rate_per_s,
                timestamp = self.now )
            quote = compute_reward(snap, eco.base_rate, clamp=eco.clamp)
            self.quotes[z.zone_id] = quote.rate
            if not spot: continue
            market = self.markets[z.zone_id]
            floor = update_spot_floor(market, snap, eco.alpha, clamp=eco.clamp)
            market.capacity = sum( 1 for st in parts if st.connected and st.leased )
            prices = self._spot_rng.uniform(0, 2 * eco.base_floor, eco.spot_bidders)
            market.bids = [ Bid(bidder=i+1, price=float(p)) for i, p in enumerate(prices) ]
            accepted = clear_spot_auction(market)
            self.reward_series.append(RewardPoint(at=self.now, zone_id=z.zone_id, supply_rps=snap.supplied_capacity,
                demand_rps=snap.demanded_capacity, reward_rate=quote.rate, spot_floor=floor,
                spot_accepted=sum( a.quantity for a in accepted ), spot_revenue=sum( a.payment for a in accepted )))

def run_once(cfg :ScenarioConfig, run_index :int, *, trace :bool = False) -> RunResult:
    """Run one simulation; module-level so it can be used with a process pool."""
    return Simulation(cfg, run_index, trace=trace).run()
