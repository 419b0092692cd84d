"""User access tokens: issued by the access authority, checked per action."""

from __future__ import annotations

import random
import struct
from dataclasses import dataclass
from typing import FrozenSet, Iterable, Optional

from .crypto import KeyPair, verify_signature

LINKABILITY = "LINKABILITY"


@dataclass(frozen=True)
class AccessToken:
    subject: str
    rights: FrozenSet[str]
    expiry: int  # ms
    signature: bytes

    def tbs(self) -> bytes:
        subject = self.subject.encode()
        rights = b"\x00".join(r.encode() for r in sorted(self.rights))
        return (
            b"TOKEN\x01"
            + struct.pack(">H", len(subject)) + subject
            + struct.pack(">H", len(rights)) + rights
            + struct.pack(">Q", self.expiry)
        )


@dataclass(frozen=True)
class Decision:
    allowed: bool
    reason: Optional[str] = None

    def __bool__(self):
        return self.allowed


class AccessAuthority:
    def __init__(self, rng: random.Random):
        self._key = KeyPair.generate(rng)

    @property
    def public_key(self) -> bytes:
        return self._key.public

    def issue_token(self, user: str, rights: Iterable[str], now: int, ttl_ms: int = 3_600_000) -> AccessToken:
        rights = frozenset(rights)
        if not rights:
            raise ValueError("a token needs at least one right")
        unsigned = AccessToken(user, rights, now + ttl_ms, b"")
        return AccessToken(user, rights, now + ttl_ms, self._key.sign(unsigned.tbs()))

    def authorize(self, token: AccessToken, action: str, now: int) -> Decision:
        if not verify_signature(self._key.public, token.signature, token.tbs()):
            return Decision(False, "BAD_SIGNATURE")
        if now >= token.expiry:
            return Decision(False, "EXPIRED")
        if action not in token.rights:
            return Decision(False, "NOT_PERMITTED")
        return Decision(True)
