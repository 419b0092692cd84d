"""Deterministic discrete-event core and the hybrid link model.

All time is integer microseconds. Events with equal times run in the order
they were scheduled. Every stochastic draw goes through the simulator's one
seeded ``random.Random`` in a fixed order, so a (scenario, seed) pair fully
determines the run.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import logging
import random
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from statistics import NormalDist
from typing import Any, Callable, Dict, Hashable, List, Optional

from .errors import NetsimError
from .geodesy import GeoPosition, distance
from .messages import Envelope, msg_id_hex

logger = logging.getLogger(__name__)

US_PER_MS = 1000
US_PER_S = 1_000_000


def ms(value: float) -> int:
    """Milliseconds to integer microseconds."""
    return int(round(value * US_PER_MS))


class SliceId(IntEnum):
    LOW_LATENCY = 0
    DEFAULT = 1
    HIGH_THROUGHPUT = 2


class Endpoint(IntEnum):
    MEC = 0
    CLOUD = 1


class Bearer(Enum):
    ITS_G5 = "ITS_G5"
    CELLULAR = "CELLULAR"


@dataclass(frozen=True)
class ChannelKind:
    bearer: Bearer
    slice: Optional[SliceId] = None
    endpoint: Optional[Endpoint] = None

    def __post_init__(self):
        cellular = self.bearer is Bearer.CELLULAR
        if cellular != (self.slice is not None) or cellular != (self.endpoint is not None):
            raise ValueError("slice and endpoint are required for cellular channels only")

    @classmethod
    def its_g5(cls) -> "ChannelKind":
        return cls(Bearer.ITS_G5)

    @classmethod
    def cellular(cls, slice: SliceId, endpoint: Endpoint = Endpoint.MEC) -> "ChannelKind":
        return cls(Bearer.CELLULAR, SliceId(slice), Endpoint(endpoint))

    def sort_key(self):
        if self.bearer is Bearer.ITS_G5:
            return (0, 0, 0)
        return (1, int(self.slice), int(self.endpoint))

    @property
    def label(self) -> str:
        if self.bearer is Bearer.ITS_G5:
            return "ITS_G5"
        return f"CELLULAR/{self.slice.name}/{self.endpoint.name}"


ITS_G5 = ChannelKind.its_g5()


@dataclass(frozen=True)
class SliceParams:
    latency_mean: float  # ms
    latency_std: float
    latency_min: float
    loss: float


DEFAULT_SLICES = {
    SliceId.LOW_LATENCY: SliceParams(10.0, 2.0, 1.0, 0.001),
    SliceId.DEFAULT: SliceParams(30.0, 10.0, 5.0, 0.01),
    SliceId.HIGH_THROUGHPUT: SliceParams(50.0, 20.0, 10.0, 0.01),
}


@dataclass
class LinkModel:
    g5_range: float = 500.0
    g5_loss: float = 0.05
    g5_proc_delay: float = 2.0
    slices: Dict[SliceId, SliceParams] = field(default_factory=lambda: dict(DEFAULT_SLICES))
    cloud_extra: float = 40.0

    def problems(self) -> List[str]:
        out = []
        if not 0.0 <= self.g5_loss <= 1.0:
            out.append("g5_loss must be a probability")
        if self.g5_range <= 0:
            out.append("g5_range must be positive")
        if self.g5_proc_delay < 0:
            out.append("g5_proc_delay must be non-negative")
        if self.cloud_extra < 0:
            out.append("cloud_extra must be non-negative")
        for sid in SliceId:
            p = self.slices.get(sid)
            if p is None:
                out.append(f"slice {sid.name} missing")
                continue
            if p.latency_min <= 0:
                out.append(f"slice {sid.name} latency_min must be > 0")
            if p.latency_std < 0:
                out.append(f"slice {sid.name} latency_std must be >= 0")
            if not 0.0 <= p.loss <= 1.0:
                out.append(f"slice {sid.name} loss must be a probability")
        return out


class EventHandle:
    __slots__ = ("time", "seq", "label", "cancelled")

    def __init__(self, time: int, seq: int, label: str):
        self.time = time
        self.seq = seq
        self.label = label
        self.cancelled = False

    def cancel(self):
        self.cancelled = True


class EventLog:
    """JSON-lines event records with a running SHA-256 over all of them.

    Records are only retained in memory when ``keep`` is set; the hash and
    the listeners see every record regardless.
    """

    def __init__(self, keep: bool = False):
        self.keep = keep
        self.records: List[dict] = []
        self._hash = hashlib.sha256()
        self.count = 0
        self.listeners: List[Callable[[dict], None]] = []

    def emit(self, record: dict):
        line = json.dumps(record, sort_keys=True, separators=(",", ":"))
        self._hash.update(line.encode())
        self._hash.update(b"\n")
        self.count += 1
        if self.keep:
            self.records.append(record)
        for fn in self.listeners:
            fn(record)

    def hexdigest(self) -> str:
        return self._hash.hexdigest()

    def lines(self):
        for rec in self.records:
            yield json.dumps(rec, sort_keys=True, separators=(",", ":"))


@dataclass
class Node:
    node_id: Hashable
    pos: Optional[GeoPosition]
    handler: Callable[[Envelope, ChannelKind, int], None]
    g5: bool = True
    cellular: bool = True


@dataclass(frozen=True)
class Delivery:
    dest: Hashable
    time: int
    channel: ChannelKind


class Simulator:
    def __init__(self, seed: int = 0, link: Optional[LinkModel] = None, log: Optional[EventLog] = None):
        self.now = 0
        self.rng = random.Random(seed)
        self.link = link or LinkModel()
        self.log = log or EventLog()
        self._queue: list = []
        self._seq = 0
        self._order = hashlib.sha256()
        self.processed = 0
        self.nodes: Dict[Hashable, Node] = {}
        self._normal = NormalDist()

    # -- event queue -----------------------------------------------------------

    def schedule(self, time: int, action: Callable[[], Any], label: str = "") -> EventHandle:
        if time < self.now:
            raise NetsimError("TIME_IN_PAST", f"{time} < now {self.now}")
        handle = EventHandle(time, self._seq, label)
        heapq.heappush(self._queue, (time, self._seq, handle, action))
        self._seq += 1
        return handle

    def schedule_in(self, delay: int, action, label: str = "") -> EventHandle:
        return self.schedule(self.now + delay, action, label)

    def run_until(self, t: int) -> int:
        """Process every event with time <= t; returns how many ran."""
        count = 0
        q = self._queue
        while q and q[0][0] <= t:
            time, seq, handle, action = heapq.heappop(q)
            if handle.cancelled:
                continue
            self.now = time
            self._order.update(f"{time}:{seq}:{handle.label}\n".encode())
            action()
            count += 1
        self.processed += count
        if t > self.now:
            self.now = t
        return count

    @property
    def pending(self) -> int:
        return sum(1 for e in self._queue if not e[2].cancelled)

    def order_hash(self) -> str:
        return self._order.hexdigest()

    # -- nodes -----------------------------------------------------------------

    def attach(self, node_id, handler, pos: Optional[GeoPosition] = None, g5: bool = True, cellular: bool = True):
        if node_id in self.nodes:
            raise NetsimError("DUPLICATE_NODE", str(node_id))
        if g5 and pos is None:
            raise NetsimError("NO_POSITION", f"ITS-G5 node {node_id} needs a position")
        self.nodes[node_id] = Node(node_id, pos, handler, g5, cellular)

    def move(self, node_id, pos: GeoPosition):
        self.nodes[node_id].pos = pos

    # -- stochastic draws --------------------------------------------------------

    def sample_latency(self, params: SliceParams) -> float:
        """Truncated normal draw in ms via inverse CDF (always one uniform)."""
        u = self.rng.random()
        if params.latency_std <= 0:
            return max(params.latency_mean, params.latency_min)
        lo = self._normal.cdf((params.latency_min - params.latency_mean) / params.latency_std)
        p = lo + u * (1.0 - lo)
        p = min(max(p, 1e-15), 1.0 - 1e-15)
        value = params.latency_mean + params.latency_std * self._normal.inv_cdf(p)
        return max(value, params.latency_min)

    # -- transmission ------------------------------------------------------------

    def _deliver(self, dest, env: Envelope, channel: ChannelKind, sent_at: int, sender):
        def action():
            node = self.nodes.get(dest)
            self.log.emit(self._tx_record(channel, env, sender, dest, "delivered", self.now - sent_at))
            if node is not None:
                node.handler(env, channel, self.now)

        return action

    def _tx_record(self, channel, env, sender, dest, outcome, latency_us):
        return {
            "type": "tx",
            "time_us": self.now,
            "channel": channel.bearer.value,
            "slice": channel.slice.name if channel.slice is not None else None,
            "endpoint": channel.endpoint.name if channel.endpoint is not None else None,
            "msg_id": msg_id_hex(env.msg_id),
            "kind": env.kind.name,
            "sender": sender,
            "dest": dest,
            "outcome": outcome,
            "latency_us": latency_us,
        }

    def transmit_g5(self, sender, sender_pos: GeoPosition, env: Envelope) -> List[Delivery]:
        """Range-limited broadcast; each in-range receiver draws loss once."""
        link = self.link
        delay = ms(link.g5_proc_delay)
        out = []
        for node in self.nodes.values():
            if node.node_id == sender or not node.g5 or node.pos is None:
                continue
            if distance(sender_pos, node.pos) > link.g5_range:
                continue
            if self.rng.random() < link.g5_loss:
                self.log.emit(self._tx_record(ITS_G5, env, sender, node.node_id, "dropped", None))
                continue
            t = self.now + delay
            self.schedule(t, self._deliver(node.node_id, env, ITS_G5, self.now, sender), "g5")
            out.append(Delivery(node.node_id, t, ITS_G5))
        return out

    def transmit_cellular(self, env: Envelope, slice: SliceId, endpoint: Endpoint, dest, sender=None,
                          extra_delay: int = 0) -> Optional[Delivery]:
        """Unicast over a slice; ``None`` means the packet was lost."""
        node = self.nodes.get(dest)
        if node is None or not node.cellular:
            raise NetsimError("DEST_NOT_ATTACHED", str(dest))
        params = self.link.slices[SliceId(slice)]
        channel = ChannelKind.cellular(slice, endpoint)
        lost = self.rng.random() < params.loss
        latency_ms = self.sample_latency(params)
        if endpoint == Endpoint.CLOUD:
            latency_ms += self.link.cloud_extra
        if lost:
            self.log.emit(self._tx_record(channel, env, sender, dest, "dropped", None))
            return None
        t = self.now + ms(latency_ms) + extra_delay
        self.schedule(t, self._deliver(dest, env, channel, self.now, sender), "cell")
        return Delivery(dest, t, channel)
