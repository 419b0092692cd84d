"""Scenario documents: JSON schema, semantic validation, typed model."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Set, Tuple, Union

import jsonschema

from .errors import GeodesyError, ScenarioError
from .geodesy import DEFAULT_BROKER_LEVEL, GeoPosition, TileId, distance, tile_for
from .geobroker import regions_from_bboxes
from .messages import MAX_CAM_SPEED, EventKind, MsgKind, ObjectClass, SignalState
from .netsim import Endpoint, LinkModel, SliceId, SliceParams, DEFAULT_SLICES

BUNDLED = ("intersection", "lane-merge", "cross-border", "attack")

_POS = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}
_PROB = {"type": "number", "minimum": 0, "maximum": 1}
_ROUTE = {
    "type": "array", "minItems": 1,
    "items": {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3},
}
_SUB = {
    "type": "object", "additionalProperties": False, "required": ["radius_m"],
    "properties": {
        "radius_m": {"type": "number", "exclusiveMinimum": 0, "maximum": 20000},
        "kinds": {"type": "array", "minItems": 1, "items": {"enum": [k.name for k in MsgKind]}},
    },
}
_CHANNELS = {
    "type": "array", "minItems": 1,
    "items": {
        "type": "object", "additionalProperties": False, "required": ["channel", "latency_ms", "reliability"],
        "properties": {
            "channel": {"type": "string"},
            "latency_ms": {"type": "number", "minimum": 0},
            "reliability": _PROB,
            "available": {"type": "boolean"},
        },
    },
}
_STATION = {
    "g5": {"type": "boolean"},
    "cellular": {"type": "boolean"},
    "subscribe": _SUB,
    "channels": _CHANNELS,
}

SCHEMA: Dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "hybridits scenario",
    "type": "object",
    "additionalProperties": False,
    "required": ["duration_s", "seed", "mecs"],
    "properties": {
        "name": {"type": "string"},
        "description": {"type": "string"},
        "duration_s": {"type": "number", "exclusiveMinimum": 0},
        "seed": {"type": "integer", "minimum": 0},
        "tile_level": {"type": "integer", "minimum": 0, "maximum": 20},
        "geo_ttl_ms": {"type": "integer", "exclusiveMinimum": 0},
        "radii_m": {
            "type": "object", "additionalProperties": False,
            "properties": {k.name: {"type": "number", "exclusiveMinimum": 0} for k in MsgKind},
        },
        "link": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "g5_range_m": {"type": "number", "exclusiveMinimum": 0},
                "g5_loss": _PROB,
                "g5_proc_delay_ms": {"type": "number", "minimum": 0},
                "cloud_extra_ms": {"type": "number", "minimum": 0},
                "slices": {
                    "type": "object", "additionalProperties": False,
                    "properties": {
                        s.name: {
                            "type": "object", "additionalProperties": False,
                            "properties": {
                                "mean_ms": {"type": "number", "minimum": 0},
                                "std_ms": {"type": "number", "minimum": 0},
                                "min_ms": {"type": "number", "exclusiveMinimum": 0},
                                "loss": _PROB,
                            },
                        } for s in SliceId
                    },
                },
            },
        },
        "channels": _CHANNELS,
        "qos": {
            "type": "object", "additionalProperties": False,
            "properties": {
                k.name: {
                    "type": "object", "additionalProperties": False,
                    "required": ["max_latency_ms", "min_reliability", "policy"],
                    "properties": {
                        "max_latency_ms": {"type": "number", "minimum": 0},
                        "min_reliability": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                        "policy": {"enum": ["ANY_ONE", "ALL_MATCHING"]},
                    },
                } for k in MsgKind
            },
        },
        "mecs": {
            "type": "array",
            "items": {
                "type": "object", "additionalProperties": False, "required": ["id"],
                "properties": {
                    "id": {"type": "integer", "minimum": 1, "maximum": 65535},
                    "station_id": {"type": "integer", "minimum": 1, "maximum": 4294967295},
                    "bbox": {"type": "array", "items": {"type": "number"}, "minItems": 4, "maxItems": 4},
                    "tiles": {"type": "array", "items": {
                        "type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 2, "maxItems": 2}},
                },
            },
        },
        "handover": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "overlap_ms": {"type": "integer", "minimum": 0},
                "federation_hop_ms": {"type": "number", "minimum": 0},
            },
        },
        "vehicles": {
            "type": "array",
            "items": {
                "type": "object", "additionalProperties": False, "required": ["id", "route"],
                "properties": {"id": {"type": "integer", "minimum": 1, "maximum": 4294967295}, "route": _ROUTE, **_STATION},
            },
        },
        "rsus": {
            "type": "array",
            "items": {
                "type": "object", "additionalProperties": False, "required": ["id", "pos"],
                "properties": {"id": {"type": "integer", "minimum": 1, "maximum": 4294967295}, "pos": _POS, **_STATION},
            },
        },
        "sensors": {
            "type": "array",
            "items": {
                "type": "object", "additionalProperties": False, "required": ["id", "pos", "coverage_radius_m"],
                "properties": {
                    "id": {"type": "integer", "minimum": 1},
                    "pos": _POS,
                    "coverage_radius_m": {"type": "number", "exclusiveMinimum": 0, "maximum": 100000},
                    "sigma_m": {"type": "number", "minimum": 0},
                    "confidence": _PROB,
                    "period_ms": {"type": "integer", "minimum": 1},
                    "detection_prob": _PROB,
                },
            },
        },
        "objects": {
            "type": "array",
            "items": {
                "type": "object", "additionalProperties": False, "required": ["id"],
                "properties": {
                    "id": {"type": "integer", "minimum": 1},
                    "class": {"enum": [c.name for c in ObjectClass]},
                    "pos": _POS,
                    "route": _ROUTE,
                },
            },
        },
        "traffic_lights": {
            "type": "array",
            "items": {
                "type": "object", "additionalProperties": False, "required": ["rsu", "intersection", "groups"],
                "properties": {
                    "rsu": {"type": "integer"},
                    "intersection": {"type": "integer", "minimum": 0, "maximum": 4294967295},
                    "spatem_period_ms": {"type": "integer", "minimum": 1},
                    "mapem_period_ms": {"type": "integer", "minimum": 1},
                    "groups": {"type": "array", "minItems": 1, "items": {
                        "type": "object", "additionalProperties": False, "required": ["id", "plan"],
                        "properties": {
                            "id": {"type": "integer", "minimum": 0, "maximum": 65535},
                            "offset_ms": {"type": "integer", "minimum": 0},
                            "plan": {"type": "array", "minItems": 1, "items": {
                                "type": "array", "minItems": 2, "maxItems": 2,
                                "items": [{"enum": [s.name for s in SignalState]}, {"type": "integer", "minimum": 1}],
                                "prefixItems": [{"enum": [s.name for s in SignalState]}, {"type": "integer", "minimum": 1}],
                            }},
                        },
                    }},
                    "lanes": {"type": "array", "items": {
                        "type": "object", "additionalProperties": False, "required": ["id", "points", "signal_group"],
                        "properties": {
                            "id": {"type": "integer", "minimum": 0, "maximum": 65535},
                            "points": {"type": "array", "minItems": 2, "items": _POS},
                            "signal_group": {"type": "integer", "minimum": 0, "maximum": 65535},
                        },
                    }},
                },
            },
        },
        "denms": {
            "type": "array",
            "items": {
                "type": "object", "additionalProperties": False, "required": ["station", "start_s"],
                "properties": {
                    "station": {"type": "integer"},
                    "start_s": {"type": "number", "minimum": 0},
                    "end_s": {"type": "number", "minimum": 0},
                    "period_ms": {"type": "integer", "minimum": 1},
                    "event_kind": {"enum": [e.name for e in EventKind]},
                    "pos": _POS,
                    "radius_m": {"type": "number", "exclusiveMinimum": 0, "maximum": 20000},
                    "validity_ms": {"type": "integer", "minimum": 1, "maximum": 3600000},
                },
            },
        },
        "security": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "enabled": {"type": "boolean"},
                "pool_size": {"type": "integer", "minimum": 1},
                "at_validity_s": {"type": "number", "exclusiveMinimum": 0, "maximum": 300},
                "supervision": {
                    "type": "object", "additionalProperties": False,
                    "properties": {
                        "enabled": {"type": "boolean"},
                        "rules": {"type": "object", "additionalProperties": False, "properties": {
                            r: {"type": "boolean"} for r in ("TELEPORT", "FLOOD", "GHOST")}},
                        "linkability": {"type": "boolean"},
                        "window_ms": {"type": "integer", "minimum": 1},
                        "teleport_speed_mps": {"type": "number", "exclusiveMinimum": 0},
                        "flood_max_per_s": {"type": "integer", "minimum": 1},
                        "ghost_radius_m": {"type": "number", "exclusiveMinimum": 0},
                        "ghost_cams": {"type": "integer", "minimum": 1},
                        "ghost_time_tolerance_ms": {"type": "integer", "minimum": 0},
                        "correlate_period_ms": {"type": "integer", "minimum": 1},
                    },
                },
            },
        },
        "attackers": {
            "type": "array",
            "items": {
                "type": "object", "additionalProperties": False,
                "required": ["type", "station", "start_s", "end_s", "pos"],
                "properties": {
                    "type": {"enum": ["teleport", "flood", "ghost"]},
                    "station": {"type": "integer", "minimum": 1, "maximum": 4294967295},
                    "start_s": {"type": "number", "minimum": 0},
                    "end_s": {"type": "number", "minimum": 0},
                    "pos": _POS,
                    "rate_hz": {"type": "number", "exclusiveMinimum": 0, "maximum": 1000},
                    "jump_at_s": {"type": "number", "minimum": 0},
                    "jump_m": {"type": "number", "minimum": 0},
                    "speed_mps": {"type": "number", "minimum": 0, "maximum": 100},
                    "bearing_deg": {"type": "number", "minimum": 0, "exclusiveMaximum": 360},
                },
            },
        },
    },
}


# -- typed model -------------------------------------------------------------------

@dataclass
class StationSpec:
    id: int
    route: List[Tuple[float, float, float]]  # (t_s, lat, lon)
    g5: bool = True
    cellular: bool = True
    subscribe: Optional[dict] = None
    channels: Optional[list] = None
    is_rsu: bool = False


@dataclass
class Scenario:
    name: str
    duration_s: float
    seed: int
    tile_level: int
    link: LinkModel
    regions: Dict[int, Set[TileId]]
    mec_station_ids: Dict[int, int]
    raw: Dict[str, Any] = field(repr=False)
    stations: List[StationSpec] = field(default_factory=list)

    @property
    def duration_us(self) -> int:
        return int(round(self.duration_s * 1_000_000))


def _path(parts: Sequence[Union[str, int]]) -> str:
    out = "$"
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else f".{p}"
    return out


def _pos(pair) -> GeoPosition:
    return GeoPosition(pair[0], pair[1])


def _link_model(doc: dict) -> LinkModel:
    link = doc.get("link", {})
    slices = dict(DEFAULT_SLICES)
    for name, p in link.get("slices", {}).items():
        base = slices[SliceId[name]]
        slices[SliceId[name]] = SliceParams(
            p.get("mean_ms", base.latency_mean), p.get("std_ms", base.latency_std),
            p.get("min_ms", base.latency_min), p.get("loss", base.loss),
        )
    return LinkModel(
        g5_range=link.get("g5_range_m", 500.0),
        g5_loss=link.get("g5_loss", 0.05),
        g5_proc_delay=link.get("g5_proc_delay_ms", 2.0),
        slices=slices,
        cloud_extra=link.get("cloud_extra_ms", 40.0),
    )


def parse_channel(label: str):
    from .netsim import ChannelKind

    if label == "ITS_G5":
        return ChannelKind.its_g5()
    parts = label.split("/")
    if len(parts) != 3 or parts[0] != "CELLULAR" or parts[1] not in SliceId.__members__ \
            or parts[2] not in Endpoint.__members__:
        raise ValueError(f"unknown channel {label!r}")
    return ChannelKind.cellular(SliceId[parts[1]], Endpoint[parts[2]])


def diagnose(doc: Any) -> List[Tuple[str, str]]:
    """Every problem with ``doc`` as ``(json-path, message)`` pairs."""
    out: List[Tuple[str, str]] = []
    validator = jsonschema.Draft202012Validator(SCHEMA)
    for err in sorted(validator.iter_errors(doc), key=lambda e: list(map(str, e.absolute_path))):
        out.append((_path(list(err.absolute_path)), err.message))
    if out:
        return out

    level = doc.get("tile_level", DEFAULT_BROKER_LEVEL)
    owner: Dict[TileId, int] = {}
    for i, mec in enumerate(doc["mecs"]):
        if ("bbox" in mec) == ("tiles" in mec):
            out.append((_path(["mecs", i]), "exactly one of bbox or tiles is required"))
            continue
        if "bbox" in mec:
            lat0, lon0, lat1, lon1 = mec["bbox"]
            if not (-90 <= lat0 < lat1 <= 90 and -180 <= lon0 < lon1 <= 180):
                out.append((_path(["mecs", i, "bbox"]), "bbox must be [lat_min, lon_min, lat_max, lon_max]"))
                continue
            tiles = regions_from_bboxes({mec["id"]: tuple(mec["bbox"])}, level)[mec["id"]]
            if not tiles:
                out.append((_path(["mecs", i, "bbox"]), "bbox contains no tile centre at this tile level"))
        else:
            n = 1 << level
            tiles = set()
            for j, (x, y) in enumerate(mec["tiles"]):
                if x >= n or y >= n:
                    out.append((_path(["mecs", i, "tiles", j]), f"tile ({x}, {y}) outside level {level}"))
                else:
                    tiles.add(TileId(level, x, y))
        for t in sorted(tiles):
            if t in owner:
                out.append((_path(["mecs", i]), f"tile ({t.level}, {t.x}, {t.y}) already owned by MEC {owner[t]}"))
            else:
                owner[t] = mec["id"]
    mec_ids = [m["id"] for m in doc["mecs"]]
    if len(set(mec_ids)) != len(mec_ids):
        out.append(("$.mecs", "duplicate MEC id"))

    def in_region(section, i, key, pair):
        try:
            p = _pos(pair)
        except GeodesyError as exc:
            out.append((_path([section, i, *key]), exc.detail))
            return
        if tile_for(p, level) not in owner:
            out.append((_path([section, i, *key]), f"position ({pair[0]}, {pair[1]}) outside every MEC area"))

    ids: Dict[int, str] = {}

    def claim(ident, where):
        if ident in ids:
            out.append((where, f"id {ident} already used by {ids[ident]}"))
        else:
            ids[ident] = where

    for m in doc["mecs"]:
        claim(m.get("station_id", 0xFFFF0000 | m["id"]), f"$.mecs[id={m['id']}]")
    for i, v in enumerate(doc.get("vehicles", [])):
        claim(v["id"], _path(["vehicles", i]))
        times = [w[0] for w in v["route"]]
        if any(b <= a for a, b in zip(times, times[1:])):
            out.append((_path(["vehicles", i, "route"]), "waypoint times must be strictly increasing"))
        else:
            for j, (a, b) in enumerate(zip(v["route"], v["route"][1:])):
                try:
                    speed = distance(GeoPosition(a[1], a[2]), GeoPosition(b[1], b[2])) / (b[0] - a[0])
                except GeodesyError:
                    continue
                if speed > MAX_CAM_SPEED:
                    out.append((_path(["vehicles", i, "route", j + 1]),
                                f"leg speed {speed:.1f} m/s exceeds {MAX_CAM_SPEED} m/s"))
        for j, w in enumerate(v["route"]):
            in_region("vehicles", i, ["route", j], w[1:])
    for i, r in enumerate(doc.get("rsus", [])):
        claim(r["id"], _path(["rsus", i]))
        in_region("rsus", i, ["pos"], r["pos"])
    for i, s in enumerate(doc.get("sensors", [])):
        claim(s["id"], _path(["sensors", i]))
        in_region("sensors", i, ["pos"], s["pos"])
    for i, o in enumerate(doc.get("objects", [])):
        claim(o["id"], _path(["objects", i]))
        if ("pos" in o) == ("route" in o):
            out.append((_path(["objects", i]), "exactly one of pos or route is required"))
    for i, a in enumerate(doc.get("attackers", [])):
        claim(a["station"], _path(["attackers", i]))
        in_region("attackers", i, ["pos"], a["pos"])
        if a["end_s"] <= a["start_s"]:
            out.append((_path(["attackers", i, "end_s"]), "end_s must be after start_s"))

    senders = {v["id"] for v in doc.get("vehicles", [])} | {r["id"] for r in doc.get("rsus", [])}
    rsus = {r["id"] for r in doc.get("rsus", [])}
    for i, d in enumerate(doc.get("denms", [])):
        if d["station"] not in senders:
            out.append((_path(["denms", i, "station"]), f"unknown station {d['station']}"))
        if "pos" in d:
            in_region("denms", i, ["pos"], d["pos"])
    for i, tl in enumerate(doc.get("traffic_lights", [])):
        if tl["rsu"] not in rsus:
            out.append((_path(["traffic_lights", i, "rsu"]), f"unknown RSU {tl['rsu']}"))
        gids = [g["id"] for g in tl["groups"]]
        if len(set(gids)) != len(gids):
            out.append((_path(["traffic_lights", i, "groups"]), "signal group ids must be unique"))

    for key in ("channels",):
        for j, ch in enumerate(doc.get(key, [])):
            try:
                parse_channel(ch["channel"])
            except ValueError as exc:
                out.append((_path([key, j, "channel"]), str(exc)))
    for section in ("vehicles", "rsus"):
        for i, st in enumerate(doc.get(section, [])):
            for j, ch in enumerate(st.get("channels", [])):
                try:
                    parse_channel(ch["channel"])
                except ValueError as exc:
                    out.append((_path([section, i, "channels", j, "channel"]), str(exc)))
    return out


def validate(doc: Any) -> List[Tuple[str, str]]:
    return diagnose(doc)


def load_document(source: Union[str, Path]) -> dict:
    """Read a scenario file, or a bundled scenario by name."""
    p = Path(source)
    if not p.exists() and str(source) in BUNDLED:
        text = resources.files("hybridits.scenarios").joinpath(f"{source}.json").read_text()
    else:
        text = p.read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError([("$", f"invalid JSON: {exc}")]) from None


def build(doc: dict) -> Scenario:
    problems = diagnose(doc)
    if problems:
        raise ScenarioError(problems)
    level = doc.get("tile_level", DEFAULT_BROKER_LEVEL)
    regions: Dict[int, Set[TileId]] = {}
    station_ids = {}
    for mec in doc["mecs"]:
        if "bbox" in mec:
            regions[mec["id"]] = regions_from_bboxes({mec["id"]: tuple(mec["bbox"])}, level)[mec["id"]]
        else:
            regions[mec["id"]] = {TileId(level, x, y) for x, y in mec["tiles"]}
        station_ids[mec["id"]] = mec.get("station_id", 0xFFFF0000 | mec["id"])
    stations = []
    for v in doc.get("vehicles", []):
        stations.append(StationSpec(v["id"], [tuple(w) for w in v["route"]], v.get("g5", True),
                                    v.get("cellular", True), v.get("subscribe"), v.get("channels")))
    for r in doc.get("rsus", []):
        stations.append(StationSpec(r["id"], [(0.0, r["pos"][0], r["pos"][1])], r.get("g5", True),
                                    r.get("cellular", True), r.get("subscribe"), r.get("channels"), is_rsu=True))
    return Scenario(
        name=doc.get("name", "unnamed"),
        duration_s=doc["duration_s"],
        seed=doc["seed"],
        tile_level=level,
        link=_link_model(doc),
        regions=regions,
        mec_station_ids=station_ids,
        raw=doc,
        stations=stations,
    )


def load(source: Union[str, Path], seed: Optional[int] = None, duration_s: Optional[float] = None) -> Scenario:
    doc = load_document(source)
    if seed is not None:
        doc["seed"] = seed
    if duration_s is not None:
        doc["duration_s"] = duration_s
    return build(doc)
