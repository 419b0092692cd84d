"""ITS message types and their canonical wire encoding."""

from .codec import MAGIC, VERSION, canonical_bytes, decode, encode
from .types import (
    MAX_CAM_SPEED,
    MAX_CPM_OBJECTS,
    Cam,
    Cpm,
    Denm,
    Envelope,
    EventKind,
    Lane,
    Mapem,
    MsgIdCounter,
    MsgKind,
    ObjectClass,
    PerceivedObject,
    SecurityTrailer,
    SignalGroupState,
    SignalState,
    Spatem,
    make_envelope,
    msg_id_hex,
    quantize,
    validate,
    validate_envelope,
)

__all__ = [
    "MAX_CAM_SPEED", "MAX_CPM_OBJECTS", "MAGIC", "VERSION", "canonical_bytes", "decode", "encode",
    "Cam", "Cpm", "Denm", "Envelope", "EventKind", "Lane", "Mapem",
    "MsgIdCounter", "MsgKind", "ObjectClass", "PerceivedObject",
    "SecurityTrailer", "SignalGroupState", "SignalState", "Spatem",
    "make_envelope", "msg_id_hex", "quantize", "validate", "validate_envelope",
]
