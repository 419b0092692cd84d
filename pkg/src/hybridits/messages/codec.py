"""Fixed-layout big-endian wire format.

Frame::

    0xC4 | 0x01 | canonical body | 0x00                       (unsigned)
    0xC4 | 0x01 | canonical body | 0x01 at_id:u64 len:u16 sig (signed)

Canonical body: ``msg_id:16B kind:u8 sender:u32 generation_time:u64`` then
the payload fields in declaration order. Positions are two signed 32-bit
micro-degree integers (lat, lon); reals are IEEE-754 float64; lists carry a
u16 length prefix.
"""

from __future__ import annotations

import struct
from functools import lru_cache
from typing import Callable, Dict, List

from ..errors import CodecError, GeodesyError
from ..geodesy import GeoPosition
from .types import (
    Cam,
    Cpm,
    Denm,
    Envelope,
    EventKind,
    Lane,
    Mapem,
    MsgKind,
    ObjectClass,
    PerceivedObject,
    SecurityTrailer,
    SignalGroupState,
    SignalState,
    Spatem,
    validate_envelope,
)

MAGIC = 0xC4
VERSION = 0x01
TRAILER_ABSENT = 0x00
TRAILER_PRESENT = 0x01

_U8 = struct.Struct(">B")
_U16 = struct.Struct(">H")
_U32 = struct.Struct(">I")
_U64 = struct.Struct(">Q")
_F64 = struct.Struct(">d")
_POS = struct.Struct(">ii")


class _Writer:
    def __init__(self):
        self.parts: List[bytes] = []

    def u8(self, v):
        self.parts.append(_U8.pack(int(v)))

    def u16(self, v):
        self.parts.append(_U16.pack(v))

    def u32(self, v):
        self.parts.append(_U32.pack(v))

    def u64(self, v):
        self.parts.append(_U64.pack(v))

    def f64(self, v):
        # adding 0.0 folds -0.0 into 0.0 so equal values encode equally
        self.parts.append(_F64.pack(v + 0.0))

    def pos(self, p: GeoPosition):
        self.parts.append(_POS.pack(round(p.lat * 1e6), round(p.lon * 1e6)))

    def raw(self, b: bytes):
        self.parts.append(b)

    def getvalue(self) -> bytes:
        return b"".join(self.parts)


class _Reader:
    def __init__(self, data: bytes, offset: int = 0):
        self.data = data
        self.off = offset

    def _take(self, st: struct.Struct):
        end = self.off + st.size
        if end > len(self.data):
            raise CodecError("TRUNCATED", f"need {st.size} bytes at offset {self.off}")
        vals = st.unpack_from(self.data, self.off)
        self.off = end
        return vals

    def u8(self):
        return self._take(_U8)[0]

    def u16(self):
        return self._take(_U16)[0]

    def u32(self):
        return self._take(_U32)[0]

    def u64(self):
        return self._take(_U64)[0]

    def f64(self):
        return self._take(_F64)[0]

    def pos(self) -> GeoPosition:
        lat, lon = self._take(_POS)
        try:
            return GeoPosition(lat / 1e6, lon / 1e6)
        except GeodesyError as exc:
            raise CodecError("INVALID_FIELD", exc.detail) from None

    def raw(self, n: int) -> bytes:
        end = self.off + n
        if end > len(self.data):
            raise CodecError("TRUNCATED", f"need {n} bytes at offset {self.off}")
        out = bytes(self.data[self.off:end])
        self.off = end
        return out

    def enum(self, enum_cls):
        v = self.u8()
        try:
            return enum_cls(v)
        except ValueError:
            raise CodecError("INVALID_FIELD", f"{enum_cls.__name__} value {v}") from None


# -- payload writers/readers ----------------------------------------------------

def _w_cam(w: _Writer, m: Cam):
    w.u32(m.station)
    w.u64(m.ts)
    w.pos(m.pos)
    w.f64(m.speed)
    w.f64(m.heading)


def _r_cam(r: _Reader) -> Cam:
    return Cam(r.u32(), r.u64(), r.pos(), r.f64(), r.f64())


def _w_denm(w: _Writer, m: Denm):
    w.u32(m.station)
    w.u64(m.ts)
    w.pos(m.event_pos)
    w.u8(m.event_kind)
    w.f64(m.relevance_radius)
    w.u32(m.validity)
    w.u16(m.seq)


def _r_denm(r: _Reader) -> Denm:
    return Denm(r.u32(), r.u64(), r.pos(), r.enum(EventKind), r.f64(), r.u32(), r.u16())


def _w_cpm(w: _Writer, m: Cpm):
    w.u32(m.station)
    w.u64(m.ts)
    w.pos(m.sensor_pos)
    w.u16(len(m.objects))
    for o in m.objects:
        w.u32(o.object_id)
        w.pos(o.pos)
        w.f64(o.vel_east)
        w.f64(o.vel_north)
        w.f64(o.confidence)
        w.u8(o.object_class)


def _r_cpm(r: _Reader) -> Cpm:
    station, ts, sensor_pos = r.u32(), r.u64(), r.pos()
    objects = []
    for _ in range(r.u16()):
        objects.append(PerceivedObject(r.u32(), r.pos(), r.f64(), r.f64(), r.f64(), r.enum(ObjectClass)))
    return Cpm(station, ts, sensor_pos, tuple(objects))


def _w_spatem(w: _Writer, m: Spatem):
    w.u32(m.intersection)
    w.u64(m.ts)
    w.u16(len(m.groups))
    for g in m.groups:
        w.u16(g.group_id)
        w.u8(g.state)
        w.u32(g.time_to_change)


def _r_spatem(r: _Reader) -> Spatem:
    intersection, ts = r.u32(), r.u64()
    groups = []
    for _ in range(r.u16()):
        groups.append(SignalGroupState(r.u16(), r.enum(SignalState), r.u32()))
    return Spatem(intersection, ts, tuple(groups))


def _w_mapem(w: _Writer, m: Mapem):
    w.u32(m.intersection)
    w.u16(len(m.lanes))
    for lane in m.lanes:
        w.u16(lane.lane_id)
        w.u16(len(lane.polyline))
        for p in lane.polyline:
            w.pos(p)
        w.u16(lane.signal_group)


def _r_mapem(r: _Reader) -> Mapem:
    intersection = r.u32()
    lanes = []
    for _ in range(r.u16()):
        lane_id = r.u16()
        points = tuple(r.pos() for _ in range(r.u16()))
        lanes.append(Lane(lane_id, points, r.u16()))
    return Mapem(intersection, tuple(lanes))


_WRITERS: Dict[MsgKind, Callable] = {
    MsgKind.CAM: _w_cam,
    MsgKind.DENM: _w_denm,
    MsgKind.CPM: _w_cpm,
    MsgKind.SPATEM: _w_spatem,
    MsgKind.MAPEM: _w_mapem,
}

_READERS: Dict[MsgKind, Callable] = {
    MsgKind.CAM: _r_cam,
    MsgKind.DENM: _r_denm,
    MsgKind.CPM: _r_cpm,
    MsgKind.SPATEM: _r_spatem,
    MsgKind.MAPEM: _r_mapem,
}


@lru_cache(maxsize=65536)
def _canonical(env: Envelope) -> bytes:
    problems = validate_envelope(env)
    if problems:
        raise CodecError("INVALID_FIELD", "; ".join(problems))
    w = _Writer()
    w.raw(env.msg_id.to_bytes(16, "big"))
    w.u8(env.kind)
    w.u32(env.sender)
    w.u64(env.generation_time)
    _WRITERS[env.kind](w, env.payload)
    return w.getvalue()


def canonical_bytes(env: Envelope) -> bytes:
    """Deterministic body encoding; the trailer, if any, is ignored."""
    return _canonical(env.without_trailer())


def encode(env: Envelope) -> bytes:
    body = canonical_bytes(env)
    w = _Writer()
    w.u8(MAGIC)
    w.u8(VERSION)
    w.raw(body)
    if env.trailer is None:
        w.u8(TRAILER_ABSENT)
    else:
        problems = validate_envelope(env)
        if problems:
            raise CodecError("INVALID_FIELD", "; ".join(problems))
        w.u8(TRAILER_PRESENT)
        w.u64(env.trailer.at_id)
        w.u16(len(env.trailer.signature))
        w.raw(env.trailer.signature)
    return w.getvalue()


def decode(data: bytes) -> Envelope:
    r = _Reader(data)
    if r.u8() != MAGIC:
        raise CodecError("BAD_MAGIC", "first byte is not 0xC4")
    version = r.u8()
    if version != VERSION:
        raise CodecError("BAD_MAGIC", f"unsupported frame version {version}")
    msg_id = int.from_bytes(r.raw(16), "big")
    tag = r.u8()
    try:
        kind = MsgKind(tag)
    except ValueError:
        raise CodecError("UNKNOWN_KIND", f"kind tag 0x{tag:02X}") from None
    sender = r.u32()
    generation_time = r.u64()
    payload = _READERS[kind](r)
    flag = r.u8()
    trailer = None
    if flag == TRAILER_PRESENT:
        at_id = r.u64()
        trailer = SecurityTrailer(at_id, r.raw(r.u16()))
    elif flag != TRAILER_ABSENT:
        raise CodecError("INVALID_FIELD", f"trailer flag 0x{flag:02X}")
    if r.off != len(data):
        raise CodecError("INVALID_FIELD", f"{len(data) - r.off} trailing bytes")
    env = Envelope(msg_id, kind, sender, generation_time, payload, trailer)
    problems = validate_envelope(env)
    if problems:
        raise CodecError("INVALID_FIELD", "; ".join(problems))
    return env
