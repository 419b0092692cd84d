"""The one signature primitive everything else goes through (Ed25519).

Ed25519 signing is deterministic, and key material comes from the caller's
seeded generator, so whole runs stay reproducible.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from functools import lru_cache

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

SIGNATURE_LEN = 64


@dataclass(frozen=True)
class KeyPair:
    public: bytes
    private: Ed25519PrivateKey = field(repr=False, compare=False)

    @classmethod
    def generate(cls, rng: random.Random) -> "KeyPair":
        priv = Ed25519PrivateKey.from_private_bytes(rng.getrandbits(256).to_bytes(32, "big"))
        pub = priv.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
        return cls(pub, priv)

    def sign(self, data: bytes) -> bytes:
        return self.private.sign(data)


@lru_cache(maxsize=1 << 16)
def _load_public(public: bytes) -> Ed25519PublicKey:
    return Ed25519PublicKey.from_public_bytes(public)


@lru_cache(maxsize=1 << 17)
def verify_signature(public: bytes, signature: bytes, data: bytes) -> bool:
    """Pure check, memoised: many receivers verify the same signed frame."""
    try:
        _load_public(public).verify(signature, data)
    except (InvalidSignature, ValueError):
        return False
    return True
