"""Rule-based correlation over pseudonymous security events.

Events are grouped by linkability partition before rules run, so a sender
that rotates its pseudonym stays one subject. Each rule fires at most once
per episode: a trigger opens a new episode only if the same rule has not
triggered for the same group within the correlation window.
"""

from __future__ import annotations

import bisect
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

from ..geodesy import Circle, GeoPosition, distance

logger = logging.getLogger(__name__)

US_PER_MS = 1000


class EventType(Enum):
    CAM_SEEN = "CAM_SEEN"
    DENM_SEEN = "DENM_SEEN"
    VERIFY_FAIL = "VERIFY_FAIL"
    SENSOR_DETECTION = "SENSOR_DETECTION"


@dataclass(frozen=True)
class SecurityEvent:
    ts: int  # us
    pseudonym: int
    kind: EventType
    pos: Optional[GeoPosition] = None
    speed: Optional[float] = None
    msg_id: Optional[int] = None

    def as_dict(self) -> dict:
        return {
            "ts_us": self.ts,
            "pseudonym": f"{self.pseudonym:016x}",
            "kind": self.kind.value,
            "pos": [self.pos.lat, self.pos.lon] if self.pos else None,
            "speed": self.speed,
        }


@dataclass(frozen=True)
class Alert:
    rule: str
    subject: FrozenSet[int]
    evidence: Tuple[SecurityEvent, ...]
    ts: int  # us, timestamp of the triggering event

    def __post_init__(self):
        if not self.evidence:
            raise ValueError("alert evidence must be non-empty")

    def as_dict(self) -> dict:
        return {
            "type": "alert",
            "rule": self.rule,
            "ts_us": self.ts,
            "subject": [f"{p:016x}" for p in sorted(self.subject)],
            "evidence": [e.as_dict() for e in self.evidence],
        }


@dataclass
class SupervisionConfig:
    window_ms: int = 10_000
    teleport_speed: float = 70.0  # m/s
    teleport_min_jump: float = 1.0  # m, for events with identical timestamps
    flood_max_per_s: int = 10
    ghost_radius: float = 5.0
    ghost_cams: int = 3
    ghost_time_tolerance_ms: int = 100
    rules: Dict[str, bool] = field(default_factory=lambda: {"TELEPORT": True, "FLOOD": True, "GHOST": True})


LinkFn = Callable[[Iterable[int]], List[FrozenSet[int]]]


class SupervisionEngine:
    def __init__(self, link: Optional[LinkFn] = None, zones: Sequence[Circle] = (),
                 config: Optional[SupervisionConfig] = None, infrastructure: Iterable[int] = ()):
        # pseudonyms of roadside units: fixed, not expected in sensor detections
        self.infrastructure = set(infrastructure)
        self.link = link or (lambda ps: [frozenset([p]) for p in sorted(set(ps))])
        self.zones = list(zones)
        self.config = config or SupervisionConfig()
        self._events: List[Tuple[int, int, SecurityEvent]] = []
        self._seq = 0
        self._first_seen: Dict[int, int] = {}
        self._partition: Dict[int, FrozenSet[int]] = {}
        self._partition_size = -1
        self._last_trigger: Dict[Tuple[str, int], int] = {}
        self.alerts: List[Alert] = []
        self.ingested = 0

    def ingest(self, event: SecurityEvent):
        if event.kind is not EventType.SENSOR_DETECTION and event.pseudonym not in self._first_seen:
            self._first_seen[event.pseudonym] = len(self._first_seen)
        self._events.append((event.ts, self._seq, event))
        self._seq += 1
        self.ingested += 1

    # -- grouping ------------------------------------------------------------------

    def _groups(self) -> Dict[int, FrozenSet[int]]:
        if len(self._first_seen) != self._partition_size:
            self._partition = {}
            for group in self.link(self._first_seen):
                for p in group:
                    self._partition[p] = group
            self._partition_size = len(self._first_seen)
        return self._partition

    def _label(self, group: FrozenSet[int]) -> int:
        # the earliest-seen member names the group, so it survives rotation
        return min(group, key=lambda p: self._first_seen.get(p, 1 << 62))

    # -- rules -----------------------------------------------------------------------

    def _teleport(self, cams: List[SecurityEvent]):
        cfg = self.config
        for a, b in zip(cams, cams[1:]):
            dt = (b.ts - a.ts) / 1e6
            d = distance(a.pos, b.pos)
            if (dt > 0 and d / dt > cfg.teleport_speed) or (dt <= 0 and d > cfg.teleport_min_jump):
                yield b.ts, (a, b)

    def _flood(self, cams: List[SecurityEvent]):
        limit = self.config.flood_max_per_s
        times = [c.ts for c in cams]
        for i, c in enumerate(cams):
            lo = bisect.bisect_right(times, c.ts - 1_000_000)
            if i + 1 - lo > limit:
                yield c.ts, tuple(cams[lo:i + 1])

    def _ghost(self, cams: List[SecurityEvent], detections: List[SecurityEvent], det_times: List[int], now: int):
        cfg = self.config
        tol = cfg.ghost_time_tolerance_ms * US_PER_MS
        run: List[SecurityEvent] = []
        for c in cams:
            if c.ts + tol > now:
                break
            if not any(z.contains(c.pos) for z in self.zones):
                run = []
                continue
            lo = bisect.bisect_left(det_times, c.ts - tol)
            hi = bisect.bisect_right(det_times, c.ts + tol)
            confirmed = any(distance(d.pos, c.pos) <= cfg.ghost_radius for d in detections[lo:hi])
            if confirmed:
                run = []
                continue
            run.append(c)
            if len(run) >= cfg.ghost_cams:
                yield c.ts, tuple(run[-cfg.ghost_cams:])

    # -- correlation -----------------------------------------------------------------

    def correlate(self, now: int) -> List[Alert]:
        """Evaluate all rules over the window ending at ``now``; return new alerts."""
        cfg = self.config
        window = cfg.window_ms * US_PER_MS
        horizon = now - window
        self._events = [e for e in self._events if e[0] >= horizon]
        self._events.sort(key=lambda e: (e[0], e[1]))
        groups = self._groups()

        by_group: Dict[int, List[SecurityEvent]] = defaultdict(list)
        members: Dict[int, FrozenSet[int]] = {}
        detections: List[SecurityEvent] = []
        seen = set()
        for _, _, ev in self._events:
            if ev.kind is EventType.SENSOR_DETECTION:
                if ev.pos is not None:
                    detections.append(ev)
                continue
            if ev.kind is not EventType.CAM_SEEN or ev.pos is None:
                continue
            key = (ev.pseudonym, ev.ts, ev.pos)
            if key in seen:
                continue
            seen.add(key)
            group = groups.get(ev.pseudonym, frozenset([ev.pseudonym]))
            label = self._label(group)
            by_group[label].append(ev)
            members[label] = group
        det_times = [d.ts for d in detections]

        new: List[Alert] = []
        for label in sorted(by_group):
            cams = by_group[label]
            triggers = []
            if cfg.rules.get("TELEPORT", True):
                triggers += [("TELEPORT", t, ev) for t, ev in self._teleport(cams)]
            if cfg.rules.get("FLOOD", True):
                triggers += [("FLOOD", t, ev) for t, ev in self._flood(cams)]
            if cfg.rules.get("GHOST", True) and self.zones and not (members[label] & self.infrastructure):
                triggers += [("GHOST", t, ev) for t, ev in self._ghost(cams, detections, det_times, now)]
            for rule, ts, evidence in sorted(triggers, key=lambda x: (x[1], x[0])):
                key = (rule, label)
                last = self._last_trigger.get(key)
                if last is not None and ts <= last:
                    continue
                self._last_trigger[key] = ts
                if last is not None and ts - last <= window:
                    continue
                alert = Alert(rule, members[label], evidence, ts)
                new.append(alert)
                logger.info("alert %s on group %x at %d us", rule, label, ts)
        self.alerts.extend(new)
        return new
