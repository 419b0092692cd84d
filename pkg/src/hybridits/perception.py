"""Environment perception model: nearest-neighbour track fusion and CPM output.

Association happens in a local east/north plane around the MEC's reference
point. A detection joins the nearest live track within the gate; the fused
state is the confidence-weighted mean and confidences combine by noisy-OR.
There is no motion model: tracks do not move between updates.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .errors import GeodesyError, PerceptionError
from .geodesy import Circle, GeoPosition, distance, enu_offset, from_enu
from .messages import Cam, Cpm, MAX_CPM_OBJECTS, ObjectClass, PerceivedObject
from .netsim import US_PER_MS

DEFAULT_GATE_M = 2.5
DEFAULT_EXPIRY_MS = 1_500
CAM_CONFIDENCE = 0.95


@dataclass
class Track:
    track_id: int
    east: float
    north: float
    vel_east: float
    vel_north: float
    confidence: float
    last_update: int  # us
    object_class: ObjectClass = ObjectClass.UNKNOWN
    sources: set = field(default_factory=set)

    @property
    def contributors(self) -> int:
        return len(self.sources)


@dataclass(frozen=True)
class SensorDetection:
    source: int
    object: PerceivedObject
    ts: int  # us


class IngestAction(Enum):
    CREATED = "CREATED"
    UPDATED = "UPDATED"


@dataclass(frozen=True)
class IngestResult:
    action: IngestAction
    track_id: int


class EpmState:
    def __init__(self, reference: GeoPosition, region_radius: float = 10_000.0,
                 gate: float = DEFAULT_GATE_M, expiry_ms: int = DEFAULT_EXPIRY_MS):
        self.reference = reference
        self.region = Circle(reference, region_radius)
        self.gate = gate
        self.expiry_us = expiry_ms * US_PER_MS
        self.tracks: Dict[int, Track] = {}
        self.next_track_id = 1
        self.created = 0
        self.removed = 0

    def is_live(self, track: Track, now: int) -> bool:
        return now - track.last_update <= self.expiry_us

    def live_tracks(self, now: int) -> List[Track]:
        return [self.tracks[k] for k in sorted(self.tracks) if self.is_live(self.tracks[k], now)]

    def position_of(self, track: Track) -> GeoPosition:
        return from_enu(self.reference, track.east, track.north)


def _fuse(track: Track, east, north, ve, vn, conf, now, sources):
    wt, wd = track.confidence, conf
    total = wt + wd
    if total > 0:
        track.east = (wt * track.east + wd * east) / total
        track.north = (wt * track.north + wd * north) / total
        track.vel_east = (wt * track.vel_east + wd * ve) / total
        track.vel_north = (wt * track.vel_north + wd * vn) / total
    track.confidence = 1.0 - (1.0 - track.confidence) * (1.0 - conf)
    track.last_update = now
    track.sources |= sources


def ingest_detection(epm: EpmState, d: SensorDetection, now: int) -> IngestResult:
    obj = d.object
    if not epm.region.contains(obj.pos):
        raise PerceptionError("OUT_OF_REGION", f"{obj.pos} outside surveyed region")
    try:
        east, north = enu_offset(epm.reference, obj.pos)
    except GeodesyError:
        raise PerceptionError("OUT_OF_REGION", f"{obj.pos} too far from reference") from None
    best, best_d = None, math.inf
    for tid in sorted(epm.tracks):
        t = epm.tracks[tid]
        if not epm.is_live(t, now):
            continue
        dist = math.hypot(t.east - east, t.north - north)
        if dist < best_d:
            best, best_d = t, dist
    if best is not None and best_d <= epm.gate:
        _fuse(best, east, north, obj.vel_east, obj.vel_north, obj.confidence, now, {d.source})
        return IngestResult(IngestAction.UPDATED, best.track_id)
    tid = epm.next_track_id
    epm.next_track_id += 1
    epm.tracks[tid] = Track(
        tid, east, north, obj.vel_east, obj.vel_north, obj.confidence, now, obj.object_class, {d.source},
    )
    epm.created += 1
    return IngestResult(IngestAction.CREATED, tid)


def cam_velocity(speed: float, heading: float) -> Tuple[float, float]:
    h = math.radians(heading)
    return speed * math.sin(h), speed * math.cos(h)


def ingest_cam(epm: EpmState, cam: Cam, now: int) -> IngestResult:
    ve, vn = cam_velocity(cam.speed, cam.heading)
    obj = PerceivedObject(0, cam.pos, ve, vn, CAM_CONFIDENCE, ObjectClass.VEHICLE)
    return ingest_detection(epm, SensorDetection(cam.station, obj, cam.ts * US_PER_MS), now)


def end_cycle(epm: EpmState, now: int) -> int:
    """Drop expired tracks and merge live tracks closer than half the gate.

    Returns the number of tracks removed.
    """
    removed = 0
    for tid in sorted(epm.tracks):
        if not epm.is_live(epm.tracks[tid], now):
            del epm.tracks[tid]
            removed += 1
    merged = True
    while merged:
        merged = False
        ids = sorted(epm.tracks)
        for i, a_id in enumerate(ids):
            a = epm.tracks[a_id]
            for b_id in ids[i + 1:]:
                b = epm.tracks[b_id]
                if math.hypot(a.east - b.east, a.north - b.north) < epm.gate / 2.0:
                    _fuse(a, b.east, b.north, b.vel_east, b.vel_north, b.confidence,
                          max(a.last_update, b.last_update), b.sources)
                    del epm.tracks[b_id]
                    removed += 1
                    merged = True
                    break
            if merged:
                break
    epm.removed += removed
    return removed


def snapshot(epm: EpmState, station: int, now: int) -> Cpm:
    objects = []
    for t in epm.live_tracks(now)[:MAX_CPM_OBJECTS]:
        conf = min(max(t.confidence, 0.0), 1.0)
        objects.append(PerceivedObject(t.track_id, epm.position_of(t), t.vel_east, t.vel_north, conf, t.object_class))
    return Cpm(station, now // US_PER_MS, epm.reference, tuple(objects))


def accuracy(objects: Sequence[PerceivedObject], truth: Sequence[GeoPosition]) -> Tuple[float, int]:
    """Greedy one-to-one matching by increasing distance.

    Returns ``(rmse over matched pairs, tracks - truth objects)``.
    """
    pairs = sorted(
        (distance(o.pos, g), i, j) for i, o in enumerate(objects) for j, g in enumerate(truth)
    )
    used_o, used_g, sq = set(), set(), []
    for d, i, j in pairs:
        if i in used_o or j in used_g:
            continue
        used_o.add(i)
        used_g.add(j)
        sq.append(d * d)
    rmse = math.sqrt(sum(sq) / len(sq)) if sq else 0.0
    return rmse, len(objects) - len(truth)


@dataclass(frozen=True)
class GroundTruthObject:
    object_id: int
    pos: GeoPosition
    vel_east: float = 0.0
    vel_north: float = 0.0
    object_class: ObjectClass = ObjectClass.UNKNOWN


@dataclass
class Sensor:
    """Infrastructure sensor with isotropic Gaussian position noise.

    ``sigma`` is the RMS horizontal position error, so each axis gets
    ``sigma / sqrt(2)``.
    """

    sensor_id: int
    coverage: Circle
    sigma: float = 0.5  # m
    confidence: float = 0.8
    detection_prob: float = 1.0

    def detect(self, truth: Iterable[GroundTruthObject], now: int, rng: random.Random) -> List[SensorDetection]:
        out = []
        for obj in truth:
            if not self.coverage.contains(obj.pos):
                continue
            # draws happen for every covered object so the stream stays aligned
            hit = rng.random() < self.detection_prob
            axis = self.sigma / math.sqrt(2.0)
            de, dn = rng.gauss(0.0, axis), rng.gauss(0.0, axis)
            if not hit:
                continue
            pos = from_enu(obj.pos, de, dn)
            out.append(SensorDetection(
                self.sensor_id,
                PerceivedObject(obj.object_id, pos, obj.vel_east, obj.vel_north, self.confidence, obj.object_class),
                now,
            ))
        return out
