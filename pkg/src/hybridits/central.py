"""Central ITS station on a MEC server: geo-location table and forwarding."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Dict, FrozenSet, Optional

from .errors import CentralError
from .geodesy import GeoPosition, distance
from .messages import Cam, Denm, Envelope, MsgKind
from .netsim import SliceId, US_PER_MS

logger = logging.getLogger(__name__)

GEO_TTL_MS = 5_000
PURGE_FACTOR = 10

DEFAULT_RADII = {
    MsgKind.CAM: 300.0,
    MsgKind.CPM: 500.0,
    MsgKind.SPATEM: 1000.0,
    MsgKind.MAPEM: 1000.0,
    MsgKind.DENM: 300.0,  # only used when a DENM body is unavailable
}


@dataclass(frozen=True)
class TableEntry:
    pos: GeoPosition
    ts: int  # generation time of the CAM, us


class UpdateAction(Enum):
    CREATED = "CREATED"
    REPLACED = "REPLACED"
    UNCHANGED = "UNCHANGED"


@dataclass(frozen=True)
class TableUpdate:
    station: int
    action: UpdateAction
    entry: Optional[TableEntry]


class GeoLocationTable:
    def __init__(self, ttl_ms: int = GEO_TTL_MS):
        self.ttl_us = ttl_ms * US_PER_MS
        self.entries: Dict[int, TableEntry] = {}

    def is_fresh(self, entry: TableEntry, now: int) -> bool:
        return now - entry.ts <= self.ttl_us

    def fresh(self, station: int, now: int) -> Optional[TableEntry]:
        entry = self.entries.get(station)
        if entry is not None and self.is_fresh(entry, now):
            return entry
        return None

    def snapshot(self) -> Dict[int, TableEntry]:
        return dict(self.entries)

    def __len__(self):
        return len(self.entries)


class RelevancePolicy:
    def __init__(self, radii: Optional[Dict[MsgKind, float]] = None):
        self.radii = dict(DEFAULT_RADII)
        if radii:
            self.radii.update(radii)
        if any(r <= 0 for r in self.radii.values()):
            raise ValueError("relevance radii must be positive")

    def radius_for(self, env: Envelope) -> float:
        if isinstance(env.payload, Denm):
            return env.payload.relevance_radius
        return self.radii[env.kind]


# (recipient, envelope, slice) -> None
SendFn = Callable[[int, Envelope, SliceId], None]


class CentralStation:
    """One instance per MEC. ``send`` performs the downlink transmissions.

    ``observer`` (if set) is called for every dissemination decision with
    ``(envelope, now, table_snapshot, center, radius, recipients)`` so
    external auditors can recompute the recipient set independently.
    """

    def __init__(self, mec_id: int, station_id: int, send: Optional[SendFn] = None,
                 ttl_ms: int = GEO_TTL_MS, policy: Optional[RelevancePolicy] = None,
                 forward_slice: SliceId = SliceId.LOW_LATENCY):
        self.mec_id = mec_id
        self.station_id = station_id
        self.table = GeoLocationTable(ttl_ms)
        self.policy = policy or RelevancePolicy()
        self.send = send
        self.forward_slice = forward_slice
        self.observer = None

    def ingest(self, env: Envelope, now: int) -> TableUpdate:
        if not isinstance(env.payload, Cam):
            return TableUpdate(env.sender, UpdateAction.UNCHANGED, None)
        ts = env.generation_time * US_PER_MS
        current = self.table.entries.get(env.sender)
        if current is not None and ts <= current.ts:
            return TableUpdate(env.sender, UpdateAction.UNCHANGED, current)
        entry = TableEntry(env.payload.pos, ts)
        self.table.entries[env.sender] = entry
        action = UpdateAction.CREATED if current is None else UpdateAction.REPLACED
        return TableUpdate(env.sender, action, entry)

    def recipients(self, center: GeoPosition, radius: float, exclude: int, now: int) -> FrozenSet[int]:
        table = self.table
        return frozenset(
            sid for sid, entry in table.entries.items()
            if sid != exclude and table.is_fresh(entry, now) and distance(center, entry.pos) <= radius
        )

    def disseminate(self, env: Envelope, center: GeoPosition, radius: float, now: int,
                    slice: Optional[SliceId] = None) -> FrozenSet[int]:
        out = self.recipients(center, radius, env.sender, now)
        if self.observer is not None:
            self.observer(env, now, self.table.snapshot(), center, radius, out)
        if self.send is not None:
            chosen = self.forward_slice if slice is None else slice
            for sid in sorted(out):
                self.send(sid, env, chosen)
        return out

    def forward(self, env: Envelope, now: int) -> FrozenSet[int]:
        """Send ``env`` to every fresh station within its relevance radius of the sender."""
        sender = self.table.fresh(env.sender, now)
        if sender is None:
            raise CentralError("SENDER_UNKNOWN", f"no fresh location for station {env.sender}")
        return self.disseminate(env, sender.pos, self.policy.radius_for(env), now)

    def notify_environment(self, env: Envelope, now: int) -> FrozenSet[int]:
        """Event-centred DENM dissemination on the low-latency slice."""
        denm = env.payload
        if not isinstance(denm, Denm):
            raise CentralError("NOT_A_DENM", env.kind.name)
        if now > (denm.ts + denm.validity) * US_PER_MS:
            raise CentralError("EXPIRED", f"DENM seq {denm.seq} expired")
        return self.disseminate(env, denm.event_pos, denm.relevance_radius, now, SliceId.LOW_LATENCY)

    def purge_stale(self, now: int) -> int:
        limit = PURGE_FACTOR * self.table.ttl_us
        stale = [sid for sid, e in self.table.entries.items() if now - e.ts > limit]
        for sid in stale:
            del self.table.entries[sid]
        if stale:
            logger.debug("MEC %s purged %d stale entries", self.mec_id, len(stale))
        return len(stale)
