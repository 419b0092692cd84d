"""Simplified ITS message bodies and the universal envelope.

Positions inside message bodies are snapped to the micro-degree grid at
construction, so the value you hold is exactly the value that survives the
wire. Other fields are stored as given; :func:`validate` reports any value
that breaks a message invariant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import List, Optional, Tuple, Union

from ..errors import CodecError
from ..geodesy import GeoPosition, normalize_lon

U16_MAX = 0xFFFF
U32_MAX = 0xFFFF_FFFF
U64_MAX = 0xFFFF_FFFF_FFFF_FFFF

MAX_CAM_SPEED = 100.0
MAX_DENM_RADIUS = 20_000.0
MAX_DENM_VALIDITY_MS = 3_600_000
MAX_CPM_OBJECTS = 256


class MsgKind(IntEnum):
    CAM = 1
    DENM = 2
    CPM = 3
    SPATEM = 4
    MAPEM = 5


class EventKind(IntEnum):
    ACCIDENT = 1
    ROAD_CLOSURE = 2
    HAZARD = 3
    OTHER = 4


class ObjectClass(IntEnum):
    VEHICLE = 1
    PEDESTRIAN = 2
    UNKNOWN = 3


class SignalState(IntEnum):
    RED = 1
    GREEN = 2
    AMBER = 3


def quantize(pos: GeoPosition) -> GeoPosition:
    """Snap a position to the micro-degree wire grid."""
    lat = round(pos.lat * 1e6) / 1e6
    lon = normalize_lon(round(pos.lon * 1e6) / 1e6)
    if round(lon * 1e6) >= 180_000_000:
        lon = -180.0
    return GeoPosition(lat, lon)


def _snap(obj, name):
    object.__setattr__(obj, name, quantize(getattr(obj, name)))


@dataclass(frozen=True)
class Cam:
    station: int
    ts: int
    pos: GeoPosition
    speed: float
    heading: float

    def __post_init__(self):
        _snap(self, "pos")


@dataclass(frozen=True)
class Denm:
    station: int
    ts: int
    event_pos: GeoPosition
    event_kind: EventKind
    relevance_radius: float
    validity: int
    seq: int

    def __post_init__(self):
        _snap(self, "event_pos")
        object.__setattr__(self, "event_kind", EventKind(self.event_kind))


@dataclass(frozen=True)
class PerceivedObject:
    object_id: int
    pos: GeoPosition
    vel_east: float
    vel_north: float
    confidence: float
    object_class: ObjectClass = ObjectClass.UNKNOWN

    def __post_init__(self):
        _snap(self, "pos")
        object.__setattr__(self, "object_class", ObjectClass(self.object_class))


@dataclass(frozen=True)
class Cpm:
    station: int
    ts: int
    sensor_pos: GeoPosition
    objects: Tuple[PerceivedObject, ...] = ()

    def __post_init__(self):
        _snap(self, "sensor_pos")
        object.__setattr__(self, "objects", tuple(self.objects))


@dataclass(frozen=True)
class SignalGroupState:
    group_id: int
    state: SignalState
    time_to_change: int  # ms

    def __post_init__(self):
        object.__setattr__(self, "state", SignalState(self.state))


@dataclass(frozen=True)
class Spatem:
    intersection: int
    ts: int
    groups: Tuple[SignalGroupState, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "groups", tuple(self.groups))


@dataclass(frozen=True)
class Lane:
    lane_id: int
    polyline: Tuple[GeoPosition, ...]
    signal_group: int

    def __post_init__(self):
        object.__setattr__(self, "polyline", tuple(quantize(p) for p in self.polyline))


@dataclass(frozen=True)
class Mapem:
    intersection: int
    lanes: Tuple[Lane, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "lanes", tuple(self.lanes))


Payload = Union[Cam, Denm, Cpm, Spatem, Mapem]

PAYLOAD_KIND = {
    Cam: MsgKind.CAM,
    Denm: MsgKind.DENM,
    Cpm: MsgKind.CPM,
    Spatem: MsgKind.SPATEM,
    Mapem: MsgKind.MAPEM,
}


@dataclass(frozen=True)
class SecurityTrailer:
    at_id: int
    signature: bytes


@dataclass(frozen=True)
class Envelope:
    msg_id: int
    kind: MsgKind
    sender: int
    generation_time: int  # ms since simulation epoch
    payload: Payload
    trailer: Optional[SecurityTrailer] = field(default=None, compare=True)

    def __post_init__(self):
        object.__setattr__(self, "kind", MsgKind(self.kind))
        expected = PAYLOAD_KIND.get(type(self.payload))
        if expected is None or expected != self.kind:
            raise CodecError(
                "INVALID_FIELD",
                f"kind {self.kind.name} does not match payload {type(self.payload).__name__}",
            )

    def without_trailer(self) -> "Envelope":
        if self.trailer is None:
            return self
        return Envelope(self.msg_id, self.kind, self.sender, self.generation_time, self.payload)

    def with_trailer(self, trailer: SecurityTrailer) -> "Envelope":
        return Envelope(self.msg_id, self.kind, self.sender, self.generation_time, self.payload, trailer)


def make_envelope(msg_id: int, payload: Payload, sender: int, generation_time: int) -> Envelope:
    return Envelope(msg_id, PAYLOAD_KIND[type(payload)], sender, generation_time, payload)


class MsgIdCounter:
    """Per-station message id source: ``station << 96 | sequence``."""

    def __init__(self, station: int, start: int = 0):
        self.station = station
        self._seq = start

    def next(self) -> int:
        msg_id = (self.station << 96) | self._seq
        self._seq += 1
        return msg_id


def msg_id_hex(msg_id: int) -> str:
    return f"{msg_id:032x}"


# -- validation ---------------------------------------------------------------

def _finite(v) -> bool:
    return isinstance(v, (int, float)) and math.isfinite(v)


def _uint(v, hi) -> bool:
    return isinstance(v, int) and not isinstance(v, bool) and 0 <= v <= hi


def _check_station(v, name, out):
    if not _uint(v, U32_MAX) or v == 0:
        out.append(f"{name} must be a station id in 1..2^32-1")


def _check_ts(v, name, out):
    if not _uint(v, U64_MAX):
        out.append(f"{name} must be an unsigned 64-bit timestamp")


def _validate_cam(m: Cam, out):
    _check_station(m.station, "station", out)
    _check_ts(m.ts, "ts", out)
    if not _finite(m.speed) or not 0.0 <= m.speed <= MAX_CAM_SPEED:
        out.append("speed out of range")
    if not _finite(m.heading) or not 0.0 <= m.heading < 360.0:
        out.append("heading out of range")


def _validate_denm(m: Denm, out):
    _check_station(m.station, "station", out)
    _check_ts(m.ts, "ts", out)
    if not _finite(m.relevance_radius) or not 0.0 < m.relevance_radius <= MAX_DENM_RADIUS:
        out.append("relevance_radius out of range")
    if not _uint(m.validity, MAX_DENM_VALIDITY_MS) or m.validity == 0:
        out.append("validity out of range")
    if not _uint(m.seq, U16_MAX):
        out.append("seq out of range")


def _validate_object(o: PerceivedObject, prefix, out):
    if not _uint(o.object_id, U32_MAX):
        out.append(f"{prefix}.object_id out of range")
    if not (_finite(o.vel_east) and _finite(o.vel_north)):
        out.append(f"{prefix} velocity not finite")
    if not _finite(o.confidence) or not 0.0 <= o.confidence <= 1.0:
        out.append(f"{prefix}.confidence out of range")


def _validate_cpm(m: Cpm, out):
    _check_station(m.station, "station", out)
    _check_ts(m.ts, "ts", out)
    if len(m.objects) > MAX_CPM_OBJECTS:
        out.append("too many perceived objects")
    ids = [o.object_id for o in m.objects]
    if len(set(ids)) != len(ids):
        out.append("duplicate object_id")
    for i, o in enumerate(m.objects):
        _validate_object(o, f"objects[{i}]", out)


def _validate_spatem(m: Spatem, out):
    if not _uint(m.intersection, U32_MAX):
        out.append("intersection out of range")
    _check_ts(m.ts, "ts", out)
    if len(m.groups) > U16_MAX:
        out.append("too many signal groups")
    ids = [g.group_id for g in m.groups]
    if len(set(ids)) != len(ids):
        out.append("duplicate signal_group id")
    for i, g in enumerate(m.groups):
        if not _uint(g.group_id, U16_MAX):
            out.append(f"groups[{i}].group_id out of range")
        if not _uint(g.time_to_change, U32_MAX):
            out.append(f"groups[{i}].time_to_change out of range")


def _validate_mapem(m: Mapem, out):
    if not _uint(m.intersection, U32_MAX):
        out.append("intersection out of range")
    if len(m.lanes) > U16_MAX:
        out.append("too many lanes")
    for i, lane in enumerate(m.lanes):
        if not _uint(lane.lane_id, U16_MAX):
            out.append(f"lanes[{i}].lane_id out of range")
        if not _uint(lane.signal_group, U16_MAX):
            out.append(f"lanes[{i}].signal_group out of range")
        if len(lane.polyline) < 2:
            out.append(f"lanes[{i}] polyline needs at least 2 points")
        elif len(lane.polyline) > U16_MAX:
            out.append(f"lanes[{i}] polyline too long")


_VALIDATORS = {
    Cam: _validate_cam,
    Denm: _validate_denm,
    Cpm: _validate_cpm,
    Spatem: _validate_spatem,
    Mapem: _validate_mapem,
}


def validate(payload: Payload) -> List[str]:
    """Every invariant the payload violates; an empty list means valid."""
    check = _VALIDATORS.get(type(payload))
    if check is None:
        return [f"unknown payload type {type(payload).__name__}"]
    out: List[str] = []
    check(payload, out)
    return out


def validate_envelope(env: Envelope) -> List[str]:
    out: List[str] = []
    if not (isinstance(env.msg_id, int) and 0 <= env.msg_id < (1 << 128)):
        out.append("msg_id must be a 128-bit unsigned integer")
    _check_station(env.sender, "sender", out)
    _check_ts(env.generation_time, "generation_time", out)
    out.extend(validate(env.payload))
    if env.trailer is not None:
        if not _uint(env.trailer.at_id, U64_MAX):
            out.append("trailer.at_id out of range")
        if len(env.trailer.signature) > U16_MAX:
            out.append("trailer.signature too long")
    return out
