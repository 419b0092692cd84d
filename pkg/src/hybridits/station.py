"""Vehicle-side logic: route following, CAM triggering, channel choice, dedup."""

from __future__ import annotations

import bisect
from collections import OrderedDict
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .errors import ChannelSelectionError
from .geodesy import GeoPosition, distance, initial_bearing
from .messages import Cam, Envelope, MsgKind
from .netsim import ITS_G5, Bearer, ChannelKind, Endpoint, SliceId, US_PER_MS

CAM_MIN_INTERVAL_US = 100 * US_PER_MS
CAM_MAX_INTERVAL_US = 1000 * US_PER_MS
CAM_POS_THRESHOLD_M = 4.0
CAM_HEADING_THRESHOLD_DEG = 4.0
CAM_SPEED_THRESHOLD = 0.5
# Thresholds fire when reached; this absorbs float noise in the distance.
_THRESHOLD_EPS = 1e-6

DEDUP_TTL_MS = 10_000


@dataclass(frozen=True)
class Waypoint:
    t_ms: int
    pos: GeoPosition


class Route:
    """Piecewise-linear trajectory over strictly increasing waypoint times."""

    def __init__(self, waypoints: Sequence[Waypoint]):
        if not waypoints:
            raise ValueError("route needs at least one waypoint")
        for a, b in zip(waypoints, waypoints[1:]):
            if b.t_ms <= a.t_ms:
                raise ValueError("waypoint times must be strictly increasing")
        self.waypoints = list(waypoints)
        self._times = [w.t_ms for w in self.waypoints]
        # per-segment heading, carried forward over stationary segments
        self._headings = []
        heading = 0.0
        for a, b in zip(self.waypoints, self.waypoints[1:]):
            if distance(a.pos, b.pos) > 0:
                heading = initial_bearing(a.pos, b.pos)
            self._headings.append(heading)
        self._final_heading = heading

    def state_at(self, t_ms: float) -> Tuple[GeoPosition, float, float]:
        """``(position, speed m/s, heading deg)`` at time ``t_ms``."""
        wps = self.waypoints
        if len(wps) == 1 or t_ms < wps[0].t_ms:
            return wps[0].pos, 0.0, self._headings[0] if self._headings else 0.0
        if t_ms >= wps[-1].t_ms:
            return wps[-1].pos, 0.0, self._final_heading
        i = bisect.bisect_right(self._times, t_ms) - 1
        a, b = wps[i], wps[i + 1]
        f = (t_ms - a.t_ms) / (b.t_ms - a.t_ms)
        pos = GeoPosition(a.pos.lat + f * (b.pos.lat - a.pos.lat), a.pos.lon + f * (b.pos.lon - a.pos.lon))
        speed = distance(a.pos, b.pos) / ((b.t_ms - a.t_ms) / 1000.0)
        return pos, speed, self._headings[i]

    @property
    def end_ms(self) -> int:
        return self.waypoints[-1].t_ms


@dataclass
class VehicleState:
    station: int
    pos: GeoPosition
    speed: float = 0.0
    heading: float = 0.0
    route: Optional[Route] = None

    def advance(self, now_us: int):
        if self.route is not None:
            self.pos, self.speed, self.heading = self.route.state_at(now_us / US_PER_MS)


@dataclass
class CamTriggerState:
    last_cam_pos: Optional[GeoPosition] = None
    last_cam_heading: float = 0.0
    last_cam_speed: float = 0.0
    last_cam_time: Optional[int] = None  # SimTime, us

    def record(self, vehicle: VehicleState, now: int):
        self.last_cam_pos, self.last_cam_heading, self.last_cam_speed, self.last_cam_time = (
            vehicle.pos, vehicle.heading, vehicle.speed, now,
        )


def heading_delta(a: float, b: float) -> float:
    d = abs(a - b) % 360.0
    return min(d, 360.0 - d)


def step(vehicle: VehicleState, trigger: CamTriggerState, now: int) -> Optional[Cam]:
    """Emit a CAM if the generation rules call for one at ``now`` (us)."""
    if trigger.last_cam_time is not None:
        elapsed = now - trigger.last_cam_time
        if elapsed < CAM_MIN_INTERVAL_US:
            return None
        due = (
            elapsed >= CAM_MAX_INTERVAL_US
            or distance(trigger.last_cam_pos, vehicle.pos) >= CAM_POS_THRESHOLD_M - _THRESHOLD_EPS
            or heading_delta(vehicle.heading, trigger.last_cam_heading) >= CAM_HEADING_THRESHOLD_DEG - _THRESHOLD_EPS
            or abs(vehicle.speed - trigger.last_cam_speed) >= CAM_SPEED_THRESHOLD - _THRESHOLD_EPS
        )
        if not due:
            return None
    trigger.record(vehicle, now)
    return Cam(vehicle.station, now // US_PER_MS, vehicle.pos, vehicle.speed, vehicle.heading % 360.0)


# -- channel selection ----------------------------------------------------------

class DeliveryPolicy(Enum):
    ANY_ONE = "ANY_ONE"
    ALL_MATCHING = "ALL_MATCHING"


@dataclass(frozen=True)
class QosRequirement:
    max_latency: float  # ms
    min_reliability: float
    delivery_policy: DeliveryPolicy = DeliveryPolicy.ANY_ONE

    def __post_init__(self):
        if not 0.0 < self.min_reliability <= 1.0:
            raise ValueError("min_reliability must be in (0, 1]")


DEFAULT_QOS: Dict[MsgKind, QosRequirement] = {
    MsgKind.CAM: QosRequirement(100.0, 0.9, DeliveryPolicy.ANY_ONE),
    MsgKind.DENM: QosRequirement(50.0, 0.99, DeliveryPolicy.ALL_MATCHING),
    MsgKind.CPM: QosRequirement(50.0, 0.95, DeliveryPolicy.ANY_ONE),
    MsgKind.SPATEM: QosRequirement(50.0, 0.95, DeliveryPolicy.ANY_ONE),
    MsgKind.MAPEM: QosRequirement(50.0, 0.95, DeliveryPolicy.ANY_ONE),
}


@dataclass(frozen=True)
class ChannelEstimate:
    channel: ChannelKind
    est_latency: float  # ms
    est_reliability: float
    available: bool = True


def default_estimates() -> List[ChannelEstimate]:
    return [
        ChannelEstimate(ITS_G5, 2.0, 0.99),
        ChannelEstimate(ChannelKind.cellular(SliceId.LOW_LATENCY, Endpoint.MEC), 10.0, 0.999),
    ]


def select_channels(kind: MsgKind, qos: QosRequirement, estimates: Iterable[ChannelEstimate]) -> Tuple[ChannelKind, ...]:
    """Channels to send on, in preference order (lowest latency first)."""
    estimates = list(estimates)
    if not estimates:
        raise ChannelSelectionError("NO_CHANNEL_MEETS_QOS", "no channels configured")
    candidates = sorted(
        (
            e for e in estimates
            if e.available and e.est_latency <= qos.max_latency and e.est_reliability >= qos.min_reliability
        ),
        key=lambda e: (e.est_latency, e.channel.sort_key()),
    )
    if not candidates:
        raise ChannelSelectionError("NO_CHANNEL_MEETS_QOS", f"{kind.name}: {qos}")
    if qos.delivery_policy is DeliveryPolicy.ANY_ONE:
        return (candidates[0].channel,)
    seen = []
    for e in candidates:
        if e.channel not in seen:
            seen.append(e.channel)
    return tuple(seen)


# -- reception -----------------------------------------------------------------

class ReceiveOutcome(Enum):
    DELIVERED_TO_APP = "DELIVERED_TO_APP"
    DUPLICATE_SUPPRESSED = "DUPLICATE_SUPPRESSED"


class DedupCache:
    """msg_id -> first sighting; entries expire ``ttl_ms`` after first seen."""

    def __init__(self, ttl_ms: int = DEDUP_TTL_MS):
        self.ttl_us = ttl_ms * US_PER_MS
        self._seen: "OrderedDict[int, int]" = OrderedDict()

    def evict(self, now: int):
        seen = self._seen
        while seen:
            msg_id, first = next(iter(seen.items()))
            if now - first < self.ttl_us:
                break
            seen.popitem(last=False)

    def __contains__(self, msg_id) -> bool:
        return msg_id in self._seen

    def __len__(self):
        return len(self._seen)

    def insert(self, msg_id: int, now: int):
        self._seen[msg_id] = now


def on_receive(env: Envelope, dedup: DedupCache, now: int) -> ReceiveOutcome:
    dedup.evict(now)
    if env.msg_id in dedup:
        return ReceiveOutcome.DUPLICATE_SUPPRESSED
    dedup.insert(env.msg_id, now)
    return ReceiveOutcome.DELIVERED_TO_APP


@dataclass
class HadSink:
    """Stand-in for the automated-driving function: counts what it is given."""

    received: Dict[int, int] = field(default_factory=dict)  # msg_id -> time_us
    duplicates: int = 0

    def accept(self, env: Envelope, now: int):
        if env.msg_id in self.received:
            self.duplicates += 1
        else:
            self.received[env.msg_id] = now
