"""Region-partitioned geographic publish/subscribe with MEC handover.

Each broker owns a disjoint set of tiles (its MEC area). A subscription
lives at one or more brokers and is indexed there by the tiles covering its
circle. Brokers advertise which tiles they index subscriptions on, so a
publication's owning broker can fan out to every broker that might hold a
match with a single tile lookup.

Handover is make-before-break: the vehicle's subscriptions are copied to the
target broker immediately, both brokers match during the overlap window, and
the source copy is dropped when the window closes. Receivers deduplicate.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Dict, FrozenSet, Iterable, List, Optional, Set, Tuple

from .errors import BrokerError
from .geodesy import DEFAULT_BROKER_LEVEL, Circle, GeoPosition, TileId, distance, tile_for, tiles_covering
from .messages import Envelope, MsgKind
from .netsim import US_PER_MS

logger = logging.getLogger(__name__)

MAX_SUBSCRIPTION_RADIUS_M = 20_000.0
DEFAULT_OVERLAP_MS = 500
FEDERATION_HOP_MS = 5


@dataclass(frozen=True)
class Subscription:
    sub_id: int
    station: int
    area: Circle
    kinds: FrozenSet[MsgKind]
    home_broker: int

    def matches(self, kind: MsgKind, pos: GeoPosition) -> bool:
        return kind in self.kinds and distance(pos, self.area.center) <= self.area.radius


@dataclass(frozen=True)
class HandoverCommand:
    station: int
    source: int
    target: int
    issued_at: int  # us
    overlap_window: int = DEFAULT_OVERLAP_MS  # ms

    def __post_init__(self):
        if self.source == self.target:
            raise BrokerError("INVALID_HANDOVER", "source and target MEC are the same")

    @property
    def window_end(self) -> int:
        return self.issued_at + self.overlap_window * US_PER_MS


@dataclass
class HandoverRecord:
    station: int
    source: int
    target: int
    issued_at: int
    activated_at: int
    window_end: int
    completed_at: Optional[int] = None
    subscriptions: Tuple[int, ...] = ()

    def as_dict(self) -> dict:
        return {
            "station": self.station, "from": self.source, "to": self.target,
            "issued_at_us": self.issued_at, "activated_at_us": self.activated_at,
            "window_end_us": self.window_end, "completed_at_us": self.completed_at,
            "subscriptions": list(self.subscriptions),
        }


@dataclass(frozen=True)
class BrokerDelivery:
    broker: int
    station: int
    hops: int  # 0 when matched at the owning broker


@dataclass(frozen=True)
class PublishResult:
    owner: int
    stations: FrozenSet[int]
    deliveries: Tuple[BrokerDelivery, ...]


class Broker:
    def __init__(self, broker_id: int, region: Iterable[TileId], level: int = DEFAULT_BROKER_LEVEL):
        self.broker_id = broker_id
        self.region = frozenset(region)
        self.level = level
        if any(t.level != level for t in self.region):
            raise BrokerError("INVALID_REGION", f"broker {broker_id} region mixes tile levels")
        self.subs: Dict[int, Subscription] = {}
        self._index: Dict[TileId, Set[int]] = defaultdict(set)
        self._tiles: Dict[int, Set[TileId]] = {}

    def add(self, sub: Subscription) -> Set[TileId]:
        self.remove(sub.sub_id)
        tiles = tiles_covering(sub.area, self.level)
        self.subs[sub.sub_id] = sub
        self._tiles[sub.sub_id] = tiles
        for t in tiles:
            self._index[t].add(sub.sub_id)
        return tiles

    def remove(self, sub_id: int) -> Set[TileId]:
        sub = self.subs.pop(sub_id, None)
        if sub is None:
            return set()
        tiles = self._tiles.pop(sub_id)
        for t in tiles:
            bucket = self._index[t]
            bucket.discard(sub_id)
            if not bucket:
                del self._index[t]
        return tiles

    def match(self, kind: MsgKind, pos: GeoPosition) -> Set[int]:
        ids = self._index.get(tile_for(pos, self.level), ())
        return {self.subs[i].station for i in ids if self.subs[i].matches(kind, pos)}

    def for_station(self, station: int) -> List[Subscription]:
        return [s for s in self.subs.values() if s.station == station]


class BrokerNetwork:
    """All brokers of a scenario plus the Geo Service handover state."""

    def __init__(self, regions: Dict[int, Iterable[TileId]], level: int = DEFAULT_BROKER_LEVEL,
                 overlap_ms: int = DEFAULT_OVERLAP_MS):
        self.level = level
        self.overlap_ms = overlap_ms
        self.brokers: Dict[int, Broker] = {}
        self.owner: Dict[TileId, int] = {}
        for bid in sorted(regions):
            broker = Broker(bid, regions[bid], level)
            for t in broker.region:
                if t in self.owner:
                    raise BrokerError("OVERLAPPING_REGIONS", f"tile {t} owned by {self.owner[t]} and {bid}")
                self.owner[t] = bid
            self.brokers[bid] = broker
        self._next_sub = 1
        self.home: Dict[int, int] = {}
        self._in_progress: Dict[int, HandoverRecord] = {}
        self.completed: List[HandoverRecord] = []
        # tile -> broker -> number of that broker's subscriptions indexed on the tile
        self._adverts: Dict[TileId, Dict[int, int]] = defaultdict(dict)
        self._sub_brokers: Dict[int, Set[int]] = defaultdict(set)

    # -- topology ----------------------------------------------------------------

    def area_of(self, pos: GeoPosition) -> int:
        bid = self.owner.get(tile_for(pos, self.level))
        if bid is None:
            raise BrokerError("NO_BROKER_FOR_POSITION", f"{pos}")
        return bid

    def _advertise(self, bid: int, tiles: Iterable[TileId], delta: int):
        for t in tiles:
            per = self._adverts[t]
            n = per.get(bid, 0) + delta
            if n > 0:
                per[bid] = n
            else:
                per.pop(bid, None)
                if not per:
                    del self._adverts[t]

    def _place(self, bid: int, sub: Subscription):
        broker = self.brokers[bid]
        self._advertise(bid, broker.remove(sub.sub_id), -1)
        self._advertise(bid, broker.add(sub), +1)
        self._sub_brokers[sub.sub_id].add(bid)

    def _unplace(self, bid: int, sub_id: int):
        self._advertise(bid, self.brokers[bid].remove(sub_id), -1)
        holders = self._sub_brokers.get(sub_id)
        if holders is not None:
            holders.discard(bid)
            if not holders:
                del self._sub_brokers[sub_id]

    # -- subscriptions -------------------------------------------------------------

    def subscribe(self, station: int, area: Circle, kinds: Iterable[MsgKind]) -> int:
        kinds = frozenset(MsgKind(k) for k in kinds)
        if not kinds:
            raise BrokerError("INVALID_SUBSCRIPTION", "kinds must be non-empty")
        if area.radius > MAX_SUBSCRIPTION_RADIUS_M:
            raise BrokerError("INVALID_SUBSCRIPTION", f"radius {area.radius} m exceeds 20 km")
        bid = self.area_of(area.center)
        self.home.setdefault(station, bid)
        sub = Subscription(self._next_sub, station, area, kinds, bid)
        self._next_sub += 1
        self._place(bid, sub)
        # a handover in flight must carry new subscriptions to both sides
        rec = self._in_progress.get(station)
        if rec is not None:
            for other in (rec.source, rec.target):
                if other != bid:
                    self._place(other, sub)
        return sub.sub_id

    def unsubscribe(self, sub_id: int) -> bool:
        holders = list(self._sub_brokers.get(sub_id, ()))
        if not holders:
            logger.info("unsubscribe of unknown subscription %s", sub_id)
        for bid in holders:
            self._unplace(bid, sub_id)
        return True

    def update_area(self, sub_id: int, area: Circle):
        """Move a subscription's circle (vehicles re-centre theirs as they drive)."""
        for bid in sorted(self._sub_brokers.get(sub_id, ())):
            old = self.brokers[bid].subs[sub_id]
            self._place(bid, replace(old, area=area))

    def subscriptions(self) -> Dict[int, Subscription]:
        """Every distinct subscription, whichever brokers hold copies."""
        out = {}
        for bid in sorted(self.brokers):
            for sid, sub in self.brokers[bid].subs.items():
                out.setdefault(sid, sub)
        return out

    # -- publication ---------------------------------------------------------------

    def publish(self, env: Envelope, pos: GeoPosition, now: Optional[int] = None) -> PublishResult:
        if now is not None:
            self.complete_due(now)
        owner = self.area_of(pos)
        tile = tile_for(pos, self.level)
        targets = {owner} | set(self._adverts.get(tile, {}))
        deliveries = []
        stations = set()
        for bid in sorted(targets):
            hops = 0 if bid == owner else 1
            for st in sorted(self.brokers[bid].match(env.kind, pos)):
                deliveries.append(BrokerDelivery(bid, st, hops))
                stations.add(st)
        return PublishResult(owner, frozenset(stations), tuple(deliveries))

    # -- handover ------------------------------------------------------------------

    def in_progress(self, station: int) -> bool:
        return station in self._in_progress

    def track_position(self, station: int, pos: GeoPosition, now: int) -> Optional[HandoverCommand]:
        self.complete_due(now)
        if station not in self.home:
            raise BrokerError("UNKNOWN_STATION", str(station))
        if station in self._in_progress:
            return None
        area = self.area_of(pos)
        if area == self.home[station]:
            return None
        return HandoverCommand(station, self.home[station], area, now, self.overlap_ms)

    def handover(self, cmd: HandoverCommand) -> HandoverRecord:
        if cmd.station not in self.home:
            raise BrokerError("UNKNOWN_STATION", str(cmd.station))
        if self.home[cmd.station] != cmd.source or cmd.station in self._in_progress:
            raise BrokerError("WRONG_SOURCE", f"station {cmd.station} is not homed at {cmd.source}")
        if cmd.target not in self.brokers:
            raise BrokerError("UNKNOWN_BROKER", str(cmd.target))
        source = self.brokers[cmd.source]
        subs = source.for_station(cmd.station)
        for sub in subs:
            self._place(cmd.target, replace(sub, home_broker=cmd.target))
        rec = HandoverRecord(
            cmd.station, cmd.source, cmd.target, cmd.issued_at, cmd.issued_at, cmd.window_end,
            subscriptions=tuple(s.sub_id for s in subs),
        )
        self._in_progress[cmd.station] = rec
        return rec

    def complete_due(self, now: int) -> List[HandoverRecord]:
        done = []
        for station in sorted(self._in_progress):
            rec = self._in_progress[station]
            if now < rec.window_end:
                continue
            for sub in self.brokers[rec.source].for_station(station):
                self._unplace(rec.source, sub.sub_id)
            self.home[station] = rec.target
            rec.completed_at = rec.window_end
            del self._in_progress[station]
            self.completed.append(rec)
            done.append(rec)
        return done


def brute_force_match(subs: Iterable[Subscription], kind: MsgKind, pos: GeoPosition) -> Set[int]:
    """Flat single-broker reference matcher."""
    return {s.station for s in subs if s.matches(kind, pos)}


def regions_from_bboxes(bboxes: Dict[int, Tuple[float, float, float, float]],
                        level: int = DEFAULT_BROKER_LEVEL) -> Dict[int, Set[TileId]]:
    """Tile sets for ``{broker: (lat_min, lon_min, lat_max, lon_max)}`` rectangles.

    A tile belongs to the rectangle containing its center point.
    """
    out: Dict[int, Set[TileId]] = {}
    for bid, (lat0, lon0, lat1, lon1) in bboxes.items():
        lo = tile_for(GeoPosition(lat0, lon0), level)
        hi = tile_for(GeoPosition(lat1, min(lon1, 179.999999)), level)
        tiles = set()
        for x in range(lo.x, hi.x + 1):
            for y in range(lo.y, hi.y + 1):
                t = TileId(level, x, y)
                c = t.center()
                if lat0 <= c.lat < lat1 and lon0 <= c.lon < lon1:
                    tiles.add(t)
        out[bid] = tiles
    return out
