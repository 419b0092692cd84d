"""End-to-end scenario execution: wires every module and gathers metrics.

The run is a single discrete-event simulation. Honest stations step every
100 ms, sensors and CPM cycles run on their own periods, and supervision
correlates once per ``correlate_period_ms``. Every module decision that has an
independent reference (forwarding recipients, broker matches, delivery
uniqueness, radio range, latency floors, CAM spacing, table monotonicity) is
re-checked here and counted in :attr:`Runner.audit`.
"""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Set, Tuple

from .central import DEFAULT_RADII, CentralStation, RelevancePolicy
from .errors import BrokerError, CentralError, ChannelSelectionError, PerceptionError, SecurityError
from .geobroker import FEDERATION_HOP_MS, BrokerNetwork, brute_force_match
from .geodesy import Circle, GeoPosition, destination, distance
from .messages import (
    Cam, Cpm, Denm, Envelope, EventKind, Lane, Mapem, MsgIdCounter, MsgKind, ObjectClass,
    SignalGroupState, SignalState, Spatem, make_envelope,
)
from .metrics import latency_summary, rounded
from .netsim import Bearer, ChannelKind, Endpoint, EventLog, SliceId, Simulator, US_PER_MS, ms
from .perception import (
    DEFAULT_EXPIRY_MS, EpmState, GroundTruthObject, Sensor, accuracy, cam_velocity, end_cycle,
    ingest_cam, ingest_detection, snapshot,
)
from .scenario import Scenario, StationSpec, parse_channel
from .security import (
    LINKABILITY, EventType, Pki, SecurityEvent, SupervisionConfig, SupervisionEngine, rotate,
    sign_envelope, verify,
)
from .station import (
    CAM_MAX_INTERVAL_US, CAM_MIN_INTERVAL_US, DEFAULT_QOS, DEDUP_TTL_MS, ChannelEstimate, CamTriggerState,
    DedupCache, DeliveryPolicy, HadSink, QosRequirement, ReceiveOutcome, Route, VehicleState, Waypoint,
    default_estimates, on_receive, select_channels, step,
)

logger = logging.getLogger(__name__)

TICK_US = 100 * US_PER_MS
RSU_CAM_PERIOD_US = 1000 * US_PER_MS
CPM_PERIOD_US = 100 * US_PER_MS
PURGE_PERIOD_US = 1000 * US_PER_MS
SETTLE_US = 1000 * US_PER_MS  # publications this close to the end are not judged
RESUBSCRIBE_M = 10.0
AUDIT_KEYS = (
    "forward_oracle", "broker_oracle", "deliver_once", "g5_range", "causality",
    "cam_interval", "table_monotonic",
)


def _route(points) -> Route:
    return Route([Waypoint(int(round(t * 1000)), GeoPosition(lat, lon)) for t, lat, lon in points])


@dataclass
class StationActor:
    spec: StationSpec
    state: VehicleState
    counter: MsgIdCounter
    estimates: List[ChannelEstimate]
    trigger: CamTriggerState = field(default_factory=CamTriggerState)
    dedup: DedupCache = field(default_factory=DedupCache)
    sink: HadSink = field(default_factory=HadSink)
    pool: list = field(default_factory=list)
    sub_id: Optional[int] = None
    sub_center: Optional[GeoPosition] = None
    last_cam_us: Optional[int] = None
    attacker: Optional[dict] = None

    @property
    def id(self) -> int:
        return self.spec.id


@dataclass
class MecActor:
    mec_id: int
    node: int
    central: CentralStation
    counter: MsgIdCounter
    pool: list = field(default_factory=list)
    epm: Optional[EpmState] = None
    observed: Dict[int, int] = field(default_factory=dict)  # entity -> last observation (us)
    last_table_ts: Dict[int, int] = field(default_factory=dict)


class Runner:
    """One simulation run of a validated :class:`Scenario`.

    ``forward_observer(env, now, snapshot, center, radius, recipients)`` and
    ``publish_observer(env, pos, subscriptions, result)`` let callers audit
    individual decisions against their own reference implementations.
    """

    def __init__(self, scenario: Scenario, trace: bool = False,
                 forward_observer: Optional[Callable] = None, publish_observer: Optional[Callable] = None):
        self.sc = sc = scenario
        doc = sc.raw
        self.log = EventLog(keep=trace)
        self.sim = Simulator(sc.seed, sc.link, self.log)
        self.end_us = sc.duration_us
        self.forward_observer = forward_observer
        self.publish_observer = publish_observer
        self.audit: Dict[str, int] = {k: 0 for k in AUDIT_KEYS}

        sec = doc.get("security", {})
        self.secure = sec.get("enabled", True)
        sup = sec.get("supervision", {})
        self.supervise = self.secure and sup.get("enabled", True)
        self.at_validity_ms = int(round(sec.get("at_validity_s", 300) * 1000))
        self.pool_size = sec.get("pool_size", 20)
        self.correlate_us = sup.get("correlate_period_ms", 1000) * US_PER_MS
        self.pki = Pki(sc.seed) if self.secure else None

        self.broker = BrokerNetwork(sc.regions, sc.tile_level, doc.get("handover", {}).get("overlap_ms", 500))
        self.hop_us = ms(doc.get("handover", {}).get("federation_hop_ms", FEDERATION_HOP_MS))
        radii = dict(DEFAULT_RADII)
        for k, v in doc.get("radii_m", {}).items():
            radii[MsgKind[k]] = v
        self.qos = dict(DEFAULT_QOS)
        for k, q in doc.get("qos", {}).items():
            self.qos[MsgKind[k]] = QosRequirement(q["max_latency_ms"], q["min_reliability"],
                                                  DeliveryPolicy[q["policy"]])

        # metrics
        self.generated: Dict[str, int] = {k.name: 0 for k in MsgKind}
        self.channel_stats: Dict[str, dict] = defaultdict(lambda: {"delivered": 0, "dropped": 0, "lat": []})
        self.app_rx: Dict[Tuple[int, int], int] = {}
        self.app_delivered = 0
        self.duplicates = 0
        self.verify_failures: Dict[str, int] = defaultdict(int)
        self.forward_errors: Dict[str, int] = defaultdict(int)
        self.publications: List[Tuple[int, int, frozenset]] = []
        self.no_channel = 0
        self.undeliverable = 0
        self.attack_log: List[dict] = []
        self._handovers_logged = 0
        self.log.listeners.append(self._on_record)

        # MECs
        self.mecs: Dict[int, MecActor] = {}
        for mec_id in sorted(sc.regions):
            node = sc.mec_station_ids[mec_id]
            central = CentralStation(mec_id, node, self._downlink(node), doc.get("geo_ttl_ms", 5000),
                                     RelevancePolicy(radii))
            central.observer = self._forward_audit(mec_id)
            self.mecs[mec_id] = MecActor(mec_id, node, central, MsgIdCounter(node))
            self.sim.attach(node, self._central_rx(mec_id), None, g5=False, cellular=True)
        self.node_to_mec = {m.node: m for m in self.mecs.values()}

        # stations
        default_channels = doc.get("channels")
        self.stations: Dict[int, StationActor] = {}
        for spec in sc.stations:
            route = _route(spec.route)
            pos, speed, heading = route.state_at(0)
            estimates = self._estimates(spec.channels or default_channels, spec)
            actor = StationActor(spec, VehicleState(spec.id, pos, speed, heading, route), MsgIdCounter(spec.id),
                                 estimates)
            self.stations[spec.id] = actor
            self.sim.attach(spec.id, self._station_rx(actor), pos, g5=spec.g5, cellular=spec.cellular)
        self.attackers: Dict[int, StationActor] = {}
        for a in doc.get("attackers", []):
            spec = StationSpec(a["station"], [(0.0, a["pos"][0], a["pos"][1])], g5=False, cellular=True)
            actor = StationActor(spec, VehicleState(spec.id, GeoPosition(*a["pos"])), MsgIdCounter(spec.id), [],
                                 attacker=a)
            self.attackers[spec.id] = actor
            self.sim.attach(spec.id, self._attacker_rx, None, g5=False, cellular=True)

        # perception
        self.sensors: List[Tuple[Sensor, int, int]] = []  # (sensor, period_us, mec)
        by_mec: Dict[int, List[dict]] = defaultdict(list)
        for s in doc.get("sensors", []):
            pos = GeoPosition(*s["pos"])
            mec = self.broker.area_of(pos)
            sensor = Sensor(s["id"], Circle(pos, s["coverage_radius_m"]), s.get("sigma_m", 0.5),
                            s.get("confidence", 0.8), s.get("detection_prob", 1.0))
            self.sensors.append((sensor, s.get("period_ms", 100) * US_PER_MS, mec))
            by_mec[mec].append(s)
        for mec, specs in by_mec.items():
            ref = GeoPosition(sum(s["pos"][0] for s in specs) / len(specs), sum(s["pos"][1] for s in specs) / len(specs))
            reach = max(distance(ref, GeoPosition(*s["pos"])) + s["coverage_radius_m"] for s in specs)
            self.mecs[mec].epm = EpmState(ref, min(reach + 200.0, 49_000.0))
        self.objects = []
        for o in doc.get("objects", []):
            pts = o.get("route") or [[0.0, o["pos"][0], o["pos"][1]]]
            self.objects.append((o["id"], ObjectClass[o.get("class", "UNKNOWN")], _route(pts)))
        self.zones = [sensor.coverage for sensor, _, _ in self.sensors]

        # security
        self.supervision: Optional[SupervisionEngine] = None
        self.true_partition: List[frozenset] = []
        if self.secure:
            self._provision()
            if self.supervise:
                cfg = SupervisionConfig(
                    window_ms=sup.get("window_ms", 10_000),
                    teleport_speed=sup.get("teleport_speed_mps", 70.0),
                    flood_max_per_s=sup.get("flood_max_per_s", 10),
                    ghost_radius=sup.get("ghost_radius_m", 5.0),
                    ghost_cams=sup.get("ghost_cams", 3),
                    ghost_time_tolerance_ms=sup.get("ghost_time_tolerance_ms", 100),
                    rules={r: sup.get("rules", {}).get(r, True) for r in ("TELEPORT", "FLOOD", "GHOST")},
                )
                link = None
                if sup.get("linkability", True):
                    token = self.pki.access.issue_token("supervision", {LINKABILITY}, 0,
                                                        int(sc.duration_s * 1000) + 3_600_000)
                    link = lambda ps: self.pki.linkability.link(ps, token, self.sim.now // US_PER_MS)
                infra = {p.ticket.at_id for a in self.stations.values() if a.spec.is_rsu for p in a.pool}
                self.supervision = SupervisionEngine(link, self.zones, cfg, infra)

        self.traffic_lights = doc.get("traffic_lights", [])
        self.denms = doc.get("denms", [])
        self._denm_seq: Dict[int, int] = defaultdict(int)
        self.summary: Optional[dict] = None

    # -- setup -------------------------------------------------------------------

    def _estimates(self, channels, spec: StationSpec) -> List[ChannelEstimate]:
        if channels:
            est = [ChannelEstimate(parse_channel(c["channel"]), c["latency_ms"], c["reliability"],
                                   c.get("available", True)) for c in channels]
        else:
            est = default_estimates()
        return [e for e in est if (spec.g5 if e.channel.bearer is Bearer.ITS_G5 else spec.cellular)]

    def _provision(self):
        pki = self.pki
        n = max(self.pool_size, math.ceil(self.sc.duration_s * 1000 / self.at_validity_ms) + 1)
        owners = [(m.node, m) for m in self.mecs.values()]
        owners += [(s.id, s) for s in self.stations.values()]
        owners += [(a.id, a) for a in self.attackers.values()]
        for sid, actor in owners:
            ec = pki.enroll(sid, 0)
            actor.pool = pki.issue_tickets(ec, n, 0, validity_ms=self.at_validity_ms)
            if not isinstance(actor, MecActor):
                self.true_partition.append(frozenset(p.ticket.at_id for p in actor.pool))

    # -- record listener (metrics + causality audit) -----------------------------

    def _on_record(self, rec: dict):
        if rec.get("type") != "tx":
            return
        label = rec["channel"] if rec["slice"] is None else f"{rec['channel']}/{rec['slice']}/{rec['endpoint']}"
        stats = self.channel_stats[label]
        if rec["outcome"] == "dropped":
            stats["dropped"] += 1
            return
        stats["delivered"] += 1
        lat = rec["latency_us"]
        stats["lat"].append(lat / US_PER_MS)
        link = self.sc.link
        if rec["slice"] is None:
            floor = ms(link.g5_proc_delay)
        else:
            floor = ms(link.slices[SliceId[rec["slice"]]].latency_min)
            if rec["endpoint"] == "CLOUD":
                floor += ms(link.cloud_extra)
        if lat < floor - 1:
            self._violation("causality", f"{label} latency {lat} us below floor {floor}")

    def _forward_audit(self, mec_id: int):
        ttl_us = self.sc.raw.get("geo_ttl_ms", 5000) * US_PER_MS

        def observer(env, now, table, center, radius, recipients):
            expected = {sid for sid, e in table.items()
                        if sid != env.sender and now - e.ts <= ttl_us and distance(center, e.pos) <= radius}
            if expected != set(recipients):
                self._violation("forward_oracle", f"MEC {mec_id} msg {env.msg_id:032x}")
            self.log.emit({"type": "forward", "time_us": now, "mec": mec_id, "msg_id": f"{env.msg_id:032x}",
                           "kind": env.kind.name, "center": [center.lat, center.lon], "radius_m": radius,
                           "recipients": sorted(recipients)})
            if self.forward_observer is not None:
                self.forward_observer(env, now, table, center, radius, recipients)
        return observer

    def _violation(self, key: str, detail: str):
        self.audit[key] += 1
        logger.warning("audit %s: %s", key, detail)
        self.log.emit({"type": "violation", "time_us": self.sim.now, "check": key, "detail": detail})

    # -- sending -----------------------------------------------------------------

    def _sign(self, env: Envelope, pool) -> Envelope:
        if not self.secure:
            return env
        return sign_envelope(env, rotate(pool, env.generation_time), env.generation_time)

    def _uplink_target(self, pos: GeoPosition) -> Optional[int]:
        try:
            return self.mecs[self.broker.area_of(pos)].node
        except BrokerError:
            return None

    def _send(self, actor: StationActor, env: Envelope):
        sim = self.sim
        pos = actor.state.pos
        try:
            channels = select_channels(env.kind, self.qos[env.kind], actor.estimates)
        except ChannelSelectionError:
            self.no_channel += 1
            channels = ()
        uplinked = False
        for ch in channels:
            if ch.bearer is Bearer.ITS_G5:
                for d in sim.transmit_g5(actor.id, pos, env):
                    if distance(pos, sim.nodes[d.dest].pos) > sim.link.g5_range:
                        self._violation("g5_range", f"{actor.id}->{d.dest}")
            else:
                dest = self._uplink_target(pos)
                if dest is not None:
                    sim.transmit_cellular(env, ch.slice, ch.endpoint, dest, sender=actor.id)
                    uplinked = True
        # the geo-location table depends on CAMs reaching the serving MEC
        if env.kind is MsgKind.CAM and actor.spec.cellular and not uplinked:
            dest = self._uplink_target(pos)
            if dest is not None:
                sim.transmit_cellular(env, SliceId.LOW_LATENCY, Endpoint.MEC, dest, sender=actor.id)

    def _downlink(self, node: int):
        def send(sid, env, slice_):
            target = self.sim.nodes.get(sid)
            if target is None or not target.cellular:
                self.undeliverable += 1
                return
            self.sim.transmit_cellular(env, slice_, Endpoint.MEC, sid, sender=node)
        return send

    # -- receiving ---------------------------------------------------------------

    def _verify(self, env: Envelope, now: int) -> Optional[str]:
        if not self.secure:
            return None
        try:
            verify(env, self.pki.trust_store, self.pki.crl, now // US_PER_MS, self.pki.tickets)
        except SecurityError as exc:
            return exc.code
        return None

    def _station_rx(self, actor: StationActor):
        def handler(env: Envelope, channel: ChannelKind, now: int):
            failure = self._verify(env, now)
            if failure is not None:
                self.verify_failures[failure] += 1
                return
            if on_receive(env, actor.dedup, now) is ReceiveOutcome.DUPLICATE_SUPPRESSED:
                self.duplicates += 1
                return
            key = (actor.id, env.msg_id)
            first = self.app_rx.get(key)
            if first is not None and now - first < DEDUP_TTL_MS * US_PER_MS:
                self._violation("deliver_once", f"station {actor.id} msg {env.msg_id:032x}")
            self.app_rx.setdefault(key, now)
            actor.sink.accept(env, now)
            self.app_delivered += 1
        return handler

    def _attacker_rx(self, env, channel, now):
        pass

    def _central_rx(self, mec_id: int):
        def handler(env: Envelope, channel: ChannelKind, now: int):
            mec = self.mecs[mec_id]
            failure = self._verify(env, now)
            pseudonym = env.trailer.at_id if env.trailer is not None else env.sender
            if failure is not None:
                self.verify_failures[failure] += 1
                if self.supervision is not None:
                    self.supervision.ingest(SecurityEvent(now, pseudonym, EventType.VERIFY_FAIL, msg_id=env.msg_id))
                return
            self._central_process(mec, env, now, pseudonym)
        return handler

    def _central_process(self, mec: MecActor, env: Envelope, now: int, pseudonym: int):
        central = mec.central
        p = env.payload
        gen_us = env.generation_time * US_PER_MS
        if self.supervision is not None:
            if isinstance(p, Cam):
                self.supervision.ingest(SecurityEvent(gen_us, pseudonym, EventType.CAM_SEEN, p.pos, p.speed, env.msg_id))
            elif isinstance(p, Denm):
                self.supervision.ingest(SecurityEvent(gen_us, pseudonym, EventType.DENM_SEEN, p.event_pos,
                                                      msg_id=env.msg_id))
        try:
            if isinstance(p, Cam):
                before = central.table.entries.get(env.sender)
                central.ingest(env, now)
                after = central.table.entries.get(env.sender)
                if before is not None and (after is None or after.ts < before.ts):
                    self._violation("table_monotonic", f"MEC {mec.mec_id} station {env.sender}")
                sender = self.stations.get(env.sender)
                if mec.epm is not None and (sender is None or not sender.spec.is_rsu):
                    try:
                        ingest_cam(mec.epm, p, now)
                        mec.observed[env.sender] = now
                    except PerceptionError:
                        pass
                central.forward(env, now)
            elif isinstance(p, Denm):
                central.notify_environment(env, now)
            else:
                central.forward(env, now)
        except CentralError as exc:
            self.forward_errors[exc.code] += 1
        self._publish(env, self._publication_pos(mec, env, now), env.sender, mec.node, now)

    def _publication_pos(self, mec: MecActor, env: Envelope, now: int) -> Optional[GeoPosition]:
        p = env.payload
        if isinstance(p, Cam):
            return p.pos
        if isinstance(p, Denm):
            return p.event_pos
        if isinstance(p, Cpm):
            return p.sensor_pos
        if isinstance(p, Mapem) and p.lanes:
            return p.lanes[0].polyline[0]
        entry = mec.central.table.fresh(env.sender, now)
        return entry.pos if entry is not None else None

    def _publish(self, env: Envelope, pos: Optional[GeoPosition], sender: int, origin: int, now: int):
        if pos is None:
            return
        broker = self.broker
        try:
            result = broker.publish(env, pos, now)
        except BrokerError:
            self.forward_errors["NO_BROKER_FOR_POSITION"] += 1
            return
        subs = broker.subscriptions()
        if self.publish_observer is not None:
            self.publish_observer(env, pos, subs, result)
        if brute_force_match(subs.values(), env.kind, pos) != set(result.stations):
            self._violation("broker_oracle", f"msg {env.msg_id:032x}")
        targets = set()
        for d in result.deliveries:
            if d.station == sender:
                continue
            node = self.sim.nodes.get(d.station)
            if node is None or not node.cellular:
                self.undeliverable += 1
                self.log.emit({"type": "undeliverable", "time_us": now, "msg_id": f"{env.msg_id:032x}",
                               "broker": d.broker, "station": d.station})
                continue
            self.sim.transmit_cellular(env, SliceId.LOW_LATENCY, Endpoint.MEC, d.station,
                                       sender=self.mecs[d.broker].node, extra_delay=d.hops * self.hop_us)
            targets.add(d.station)
        if targets:
            self.publications.append((now, env.msg_id, frozenset(targets)))
        self._drain_handovers()

    def _drain_handovers(self):
        done = self.broker.completed
        while self._handovers_logged < len(done):
            rec = done[self._handovers_logged]
            self.log.emit({"type": "handover_complete", "time_us": rec.completed_at, **rec.as_dict()})
            self._handovers_logged += 1

    # -- periodic actors -----------------------------------------------------------

    def _schedule_every(self, start: int, period: int, fn, label: str, end: Optional[int] = None):
        end = self.end_us if end is None else end

        def tick():
            fn(self.sim.now)
            nxt = self.sim.now + period
            if nxt <= end:
                self.sim.schedule(nxt, tick, label)

        if start <= end:
            self.sim.schedule(start, tick, label)

    def _station_tick(self, actor: StationActor):
        def tick(now: int):
            st = actor.state
            st.advance(now)
            if actor.spec.g5:
                self.sim.move(actor.id, st.pos)
            self._track_subscription(actor, now)
            if actor.spec.is_rsu:
                due = actor.last_cam_us is None or now - actor.last_cam_us >= RSU_CAM_PERIOD_US
                cam = Cam(actor.id, now // US_PER_MS, st.pos, 0.0, st.heading % 360.0) if due else None
            else:
                cam = step(st, actor.trigger, now)
            if cam is not None:
                if actor.last_cam_us is not None and not actor.spec.is_rsu:
                    gap = now - actor.last_cam_us
                    if not CAM_MIN_INTERVAL_US <= gap <= CAM_MAX_INTERVAL_US:
                        self._violation("cam_interval", f"station {actor.id} gap {gap} us")
                actor.last_cam_us = now
                self._emit(actor, cam, now)
        return tick

    def _track_subscription(self, actor: StationActor, now: int):
        sub = actor.spec.subscribe
        if sub is None or not actor.spec.cellular:
            return
        pos = actor.state.pos
        broker = self.broker
        try:
            if actor.sub_id is None:
                kinds = [MsgKind[k] for k in sub.get("kinds", [k.name for k in MsgKind])]
                actor.sub_id = broker.subscribe(actor.id, Circle(pos, sub["radius_m"]), kinds)
                actor.sub_center = pos
                return
            if distance(pos, actor.sub_center) >= RESUBSCRIBE_M:
                broker.update_area(actor.sub_id, Circle(pos, sub["radius_m"]))
                actor.sub_center = pos
            cmd = broker.track_position(actor.id, pos, now)
            if cmd is not None:
                rec = broker.handover(cmd)
                self.log.emit({"type": "handover_start", "time_us": now, **rec.as_dict()})
            self._drain_handovers()
        except BrokerError as exc:
            logger.info("station %s subscription update failed: %s", actor.id, exc)

    def _emit(self, actor: StationActor, payload, now: int, pool=None):
        env = make_envelope(actor.counter.next(), payload, actor.id, now // US_PER_MS)
        env = self._sign(env, actor.pool if pool is None else pool)
        self.generated[env.kind.name] += 1
        self._send(actor, env)
        return env

    def _denm_tick(self, spec: dict, index: int):
        actor = self.stations[spec["station"]]

        def tick(now: int):
            actor.state.advance(now)
            pos = GeoPosition(*spec["pos"]) if "pos" in spec else actor.state.pos
            self._denm_seq[index] += 1
            denm = Denm(actor.id, now // US_PER_MS, pos, EventKind[spec.get("event_kind", "HAZARD")],
                        spec.get("radius_m", 500.0), spec.get("validity_ms", 10_000), self._denm_seq[index] % 65536)
            self._emit(actor, denm, now)
        return tick

    def _light_state(self, group: dict, now_ms: int) -> SignalGroupState:
        plan = group["plan"]
        cycle = sum(d for _, d in plan)
        t = (now_ms + group.get("offset_ms", 0)) % cycle
        for state, dur in plan:
            if t < dur:
                return SignalGroupState(group["id"], SignalState[state], dur - t)
            t -= dur
        raise AssertionError("unreachable")

    def _spatem_tick(self, tl: dict):
        actor = self.stations[tl["rsu"]]

        def tick(now: int):
            groups = tuple(self._light_state(g, now // US_PER_MS) for g in tl["groups"])
            self._emit(actor, Spatem(tl["intersection"], now // US_PER_MS, groups), now)
        return tick

    def _mapem_tick(self, tl: dict):
        actor = self.stations[tl["rsu"]]
        lanes = tuple(Lane(l["id"], tuple(GeoPosition(*p) for p in l["points"]), l["signal_group"])
                      for l in tl.get("lanes", []))

        def tick(now: int):
            self._emit(actor, Mapem(tl["intersection"], lanes), now)
        return tick

    def _truth(self, now: int) -> List[GroundTruthObject]:
        out = []
        for oid, cls, route in self.objects:
            pos, speed, heading = route.state_at(now / US_PER_MS)
            ve, vn = cam_velocity(speed, heading)
            out.append(GroundTruthObject(oid, pos, ve, vn, cls))
        for actor in self.stations.values():
            if actor.spec.is_rsu:
                continue
            pos, speed, heading = actor.state.route.state_at(now / US_PER_MS)
            ve, vn = cam_velocity(speed, heading)
            out.append(GroundTruthObject(actor.id, pos, ve, vn, ObjectClass.VEHICLE))
        return out

    def _sensor_tick(self, sensor: Sensor, mec_id: int):
        mec = self.mecs[mec_id]

        def tick(now: int):
            for det in sensor.detect(self._truth(now), now, self.sim.rng):
                if self.supervision is not None:
                    self.supervision.ingest(SecurityEvent(now, sensor.sensor_id, EventType.SENSOR_DETECTION,
                                                          det.object.pos))
                try:
                    ingest_detection(mec.epm, det, now)
                    mec.observed[det.object.object_id] = now
                except PerceptionError:
                    pass
        return tick

    def _cpm_tick(self, mec: MecActor):
        def tick(now: int):
            end_cycle(mec.epm, now)
            cpm = snapshot(mec.epm, mec.node, now)
            env = make_envelope(mec.counter.next(), cpm, mec.node, now // US_PER_MS)
            env = self._sign(env, mec.pool)
            self.generated["CPM"] += 1
            mec.central.disseminate(env, mec.epm.reference, mec.central.policy.radius_for(env), now)
            self._publish(env, cpm.sensor_pos, mec.node, mec.node, now)
        return tick

    def _attacker_tick(self, actor: StationActor):
        a = actor.attacker
        start = int(round(a["start_s"] * 1_000_000))
        base = GeoPosition(*a["pos"])
        speed = a.get("speed_mps", 20.0 if a["type"] == "teleport" else 0.0)
        bearing = a.get("bearing_deg", 90.0)
        jump_at = start + (int(round(a["jump_at_s"] * 1_000_000)) if "jump_at_s" in a else
                           (int(round(a["end_s"] * 1_000_000)) - start) // 2)

        def tick(now: int):
            travelled = speed * (now - start) / 1_000_000
            pos = destination(base, bearing, travelled) if travelled > 0 else base
            if a["type"] == "teleport" and now >= jump_at:
                pos = destination(pos, (bearing + 90.0) % 360.0, a.get("jump_m", 500.0))
            actor.state.pos = pos
            cam = Cam(actor.id, now // US_PER_MS, pos, speed, bearing)
            env = self._emit(actor, cam, now)
            self.attack_log.append({"type": a["type"], "station": actor.id, "ts_us": now,
                                    "pseudonym": env.trailer.at_id if env.trailer else actor.id,
                                    "post_jump": a["type"] == "teleport" and now >= jump_at})
        return tick, start, jump_at

    def _correlate(self, now: int):
        for alert in self.supervision.correlate(now):
            self.log.emit({"time_us": now, **alert.as_dict()})

    def _purge(self, now: int):
        for mec in self.mecs.values():
            mec.central.purge_stale(now)

    # -- run ---------------------------------------------------------------------

    def run(self) -> dict:
        sim = self.sim
        self.log.emit({"type": "start", "time_us": 0, "scenario": self.sc.name, "seed": self.sc.seed})
        for sid in sorted(self.stations):
            self._schedule_every(0, TICK_US, self._station_tick(self.stations[sid]), f"tick:{sid}")
        for i, d in enumerate(self.denms):
            start = int(round(d["start_s"] * 1_000_000))
            end = int(round(d["end_s"] * 1_000_000)) if "end_s" in d else start
            self._schedule_every(start, d.get("period_ms", 1000) * US_PER_MS, self._denm_tick(d, i),
                                 f"denm:{i}", min(end, self.end_us))
        for tl in self.traffic_lights:
            self._schedule_every(0, tl.get("spatem_period_ms", 100) * US_PER_MS, self._spatem_tick(tl),
                                 f"spatem:{tl['rsu']}")
            self._schedule_every(0, tl.get("mapem_period_ms", 1000) * US_PER_MS, self._mapem_tick(tl),
                                 f"mapem:{tl['rsu']}")
        for sensor, period, mec in self.sensors:
            self._schedule_every(0, period, self._sensor_tick(sensor, mec), f"sensor:{sensor.sensor_id}")
        for mec_id in sorted(self.mecs):
            mec = self.mecs[mec_id]
            if mec.epm is not None:
                self._schedule_every(0, CPM_PERIOD_US, self._cpm_tick(mec), f"cpm:{mec_id}")
        if self.mecs:
            self._schedule_every(PURGE_PERIOD_US, PURGE_PERIOD_US, self._purge, "purge")
        self.jumps: Dict[int, int] = {}
        for aid in sorted(self.attackers):
            actor = self.attackers[aid]
            tick, start, jump_at = self._attacker_tick(actor)
            self.jumps[aid] = jump_at
            period = int(round(1_000_000 / actor.attacker.get("rate_hz", 10.0)))
            end = min(int(round(actor.attacker["end_s"] * 1_000_000)), self.end_us)
            self._schedule_every(start, period, tick, f"attack:{aid}", end)
        # nothing to supervise in a scenario without senders
        if self.supervision is not None and (self.stations or self.attackers):
            self._schedule_every(self.correlate_us, self.correlate_us, self._correlate, "correlate")
        sim.run_until(self.end_us)
        self.broker.complete_due(self.end_us)
        self._drain_handovers()
        if self.supervision is not None:
            self._correlate(self.end_us)
        self.summary = self._summarize()
        self.log.emit({"type": "end", "time_us": self.end_us})
        return self.summary

    # -- summary -----------------------------------------------------------------

    def _handover_metrics(self) -> dict:
        judged = [p for p in self.publications if p[0] <= self.end_us - SETTLE_US]
        missed = 0
        per_station: Dict[int, List[int]] = defaultdict(list)
        for t, msg_id, stations in judged:
            for s in stations:
                got = self.app_rx.get((s, msg_id))
                if got is None:
                    missed += 1
                else:
                    per_station[s].append(got)
        max_gap = 0.0
        for times in per_station.values():
            times.sort()
            for a, b in zip(times, times[1:]):
                max_gap = max(max_gap, (b - a) / US_PER_MS)
        records = [r.as_dict() for r in self.broker.completed]
        return {
            "count": len(records),
            "max_gap_ms": max_gap,
            "missed_publications": missed,
            "judged_publications": len(judged),
            "records": records,
        }

    def _epm_metrics(self) -> dict:
        out = {}
        truth = {o.object_id: o.pos for o in self._truth(self.end_us)}
        for mec_id in sorted(self.mecs):
            mec = self.mecs[mec_id]
            if mec.epm is None:
                continue
            end_cycle(mec.epm, self.end_us)
            objects = snapshot(mec.epm, mec.node, self.end_us).objects
            live = [truth[k] for k in sorted(mec.observed)
                    if k in truth and self.end_us - mec.observed[k] <= DEFAULT_EXPIRY_MS * US_PER_MS]
            rmse, delta = accuracy(objects, live)
            out[str(mec_id)] = {"rmse": rmse, "count_delta": delta, "tracks": len(objects), "truth": len(live)}
        return out

    def _summarize(self) -> dict:
        channels = {}
        for label in sorted(self.channel_stats):
            s = self.channel_stats[label]
            attempts = s["delivered"] + s["dropped"]
            channels[label] = {
                "delivered": s["delivered"],
                "dropped": s["dropped"],
                "delivery_ratio": s["delivered"] / attempts if attempts else None,
                "latency_ms": latency_summary(s["lat"]),
            }
        alerts = [a.as_dict() for a in self.supervision.alerts] if self.supervision is not None else []
        summary = {
            "scenario": self.sc.name,
            "seed": self.sc.seed,
            "duration_s": self.sc.duration_s,
            "counts": {
                "generated": dict(self.generated),
                "app_delivered": self.app_delivered,
                "duplicates_suppressed": self.duplicates,
                "verify_failures": dict(sorted(self.verify_failures.items())),
                "forward_errors": dict(sorted(self.forward_errors.items())),
                "no_channel": self.no_channel,
                "undeliverable": self.undeliverable,
                "events": self.sim.processed,
            },
            "channels": channels,
            "handover": self._handover_metrics(),
            "epm": self._epm_metrics(),
            "alerts": alerts,
            "crl": self.pki.crl.as_dict() if self.pki is not None else None,
            "audit": dict(self.audit),
            "violations": sum(self.audit.values()),
            "log_hash": self.log.hexdigest(),
            "order_hash": self.sim.order_hash(),
        }
        return rounded(summary)


def run(scenario: Scenario, trace: bool = False, **observers) -> Tuple[dict, Runner]:
    runner = Runner(scenario, trace=trace, **observers)
    return runner.run(), runner
