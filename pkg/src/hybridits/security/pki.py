"""Root CA, enrolment and authorization authorities, signing and verification.

Credential encodings here are compact struct layouts rather than real
certificate formats; what is kept is the trust chain: root signs the EA and
AA certificates, the EA signs enrolment credentials, the AA signs
authorization tickets, and ITS messages are signed with a ticket's key.
"""

from __future__ import annotations

import bisect
import logging
import random
import struct
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence

from ..errors import SecurityError
from ..messages import Envelope, MsgKind, SecurityTrailer, canonical_bytes
from .access import AccessAuthority
from .crypto import KeyPair, verify_signature
from .linkability import LinkabilityManager

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
AT_VALIDITY_MS = 5 * 60 * 1000
DEFAULT_POOL_SIZE = 20
EC_VALIDITY_MS = 365 * 24 * 3600 * 1000

ALL_KINDS = frozenset(MsgKind)

_ROLE_TAGS = {"ROOT": 1, "EA": 2, "AA": 3}


def _kinds_mask(kinds: Iterable[MsgKind]) -> int:
    mask = 0
    for k in kinds:
        mask |= 1 << int(k)
    return mask


@dataclass(frozen=True)
class Certificate:
    cert_id: int
    role: str
    pubkey: bytes
    issuer_id: int
    signature: bytes = b""

    def tbs(self) -> bytes:
        return struct.pack(">4sBQB", b"CERT", FORMAT_VERSION, self.cert_id, _ROLE_TAGS[self.role]) + \
            self.pubkey + struct.pack(">Q", self.issuer_id)


@dataclass(frozen=True)
class EnrolmentCredential:
    ec_id: int
    canonical_station: int
    pubkey: bytes
    valid_from: int  # ms
    valid_to: int
    issuer_id: int
    signature: bytes = b""

    def tbs(self) -> bytes:
        return struct.pack(">4sBQI", b"ENRL", FORMAT_VERSION, self.ec_id, self.canonical_station) + \
            self.pubkey + struct.pack(">QQQ", self.valid_from, self.valid_to, self.issuer_id)


@dataclass(frozen=True)
class AuthorizationTicket:
    at_id: int
    pubkey: bytes
    permitted_kinds: FrozenSet[MsgKind]
    valid_from: int  # ms, inclusive
    valid_to: int  # ms, exclusive
    issuer_id: int
    signature: bytes = b""

    # On the wire the window ends at its last valid millisecond, so back-to-back
    # tickets never share a timestamp value.
    def tbs(self) -> bytes:
        return struct.pack(">4sBQ", b"AUTH", FORMAT_VERSION, self.at_id) + self.pubkey + \
            struct.pack(">HQQQ", _kinds_mask(self.permitted_kinds), self.valid_from, self.valid_to - 1,
                        self.issuer_id)

    def serialized_fields(self) -> Dict[str, bytes]:
        """Each field as it appears on the wire, for linkability audits."""
        return {
            "format": struct.pack(">4sB", b"AUTH", FORMAT_VERSION),
            "at_id": struct.pack(">Q", self.at_id),
            "pubkey": self.pubkey,
            "permitted_kinds": struct.pack(">H", _kinds_mask(self.permitted_kinds)),
            "valid_from": struct.pack(">Q", self.valid_from),
            "valid_until": struct.pack(">Q", self.valid_to - 1),
            "issuer_id": struct.pack(">Q", self.issuer_id),
            "signature": self.signature,
        }

    def contains(self, t_ms: int) -> bool:
        return self.valid_from <= t_ms < self.valid_to


@dataclass(frozen=True)
class Pseudonym:
    """A ticket together with the private key its holder signs with."""

    ticket: AuthorizationTicket
    key: KeyPair = field(repr=False, compare=False)

    @property
    def at_id(self) -> int:
        return self.ticket.at_id


@dataclass(frozen=True)
class TrustStore:
    root: Certificate
    ea: Certificate
    aa: Certificate


@dataclass(frozen=True)
class Crl:
    revoked: FrozenSet[int] = frozenset()
    issued_at: int = 0

    def with_revoked(self, cert_id: int, now: int) -> "Crl":
        return Crl(self.revoked | {cert_id}, now)

    def __contains__(self, cert_id) -> bool:
        return cert_id in self.revoked

    def as_dict(self) -> dict:
        return {"issued_at_ms": self.issued_at, "revoked": [f"{c:016x}" for c in sorted(self.revoked)]}


def verify_chain(trust: TrustStore) -> bool:
    root = trust.root
    if not verify_signature(root.pubkey, root.signature, root.tbs()):
        return False
    for cert in (trust.ea, trust.aa):
        if cert.issuer_id != root.cert_id or not verify_signature(root.pubkey, cert.signature, cert.tbs()):
            return False
    return True


def verify_ticket(ticket: AuthorizationTicket, trust: TrustStore) -> bool:
    return (
        ticket.issuer_id == trust.aa.cert_id
        and verify_signature(trust.aa.pubkey, ticket.signature, ticket.tbs())
        and verify_chain(trust)
    )


class Pki:
    """Root CA, EA, AA, the IAM directory and the linkability escrow.

    Everything is derived from ``seed``, so two instances built from the same
    seed issue identical credentials in the same call order.
    """

    def __init__(self, seed: int = 0):
        self._rng = random.Random(f"pki:{seed}")
        self._root_key = KeyPair.generate(self._rng)
        self._ea_key = KeyPair.generate(self._rng)
        self._aa_key = KeyPair.generate(self._rng)
        root_id, ea_id, aa_id = (self._rng.getrandbits(64) for _ in range(3))
        root = Certificate(root_id, "ROOT", self._root_key.public, root_id)
        root = Certificate(root_id, "ROOT", root.pubkey, root_id, self._root_key.sign(root.tbs()))
        ea = Certificate(ea_id, "EA", self._ea_key.public, root_id)
        ea = Certificate(ea_id, "EA", ea.pubkey, root_id, self._root_key.sign(ea.tbs()))
        aa = Certificate(aa_id, "AA", self._aa_key.public, root_id)
        aa = Certificate(aa_id, "AA", aa.pubkey, root_id, self._root_key.sign(aa.tbs()))
        self.trust_store = TrustStore(root, ea, aa)
        self.crl = Crl()
        self.access = AccessAuthority(self._rng)
        self.linkability = LinkabilityManager(self.access)
        # IAM directory: identities and rights
        self.directory: Dict[int, List[EnrolmentCredential]] = {}
        self.deactivated: set = set()
        # public AT directory (no enrolment information) used by verifiers
        self.tickets: Dict[int, AuthorizationTicket] = {}
        self.issued_records: List[dict] = []

    # -- enrolment -----------------------------------------------------------------

    def enroll(self, canonical_station: int, now: int, validity_ms: int = EC_VALIDITY_MS) -> EnrolmentCredential:
        if canonical_station in self.deactivated:
            raise SecurityError("STATION_REVOKED", f"station {canonical_station} is deactivated")
        key = KeyPair.generate(self._rng)
        ec_id = self._rng.getrandbits(64)
        ea_id = self.trust_store.ea.cert_id
        unsigned = EnrolmentCredential(ec_id, canonical_station, key.public, now, now + validity_ms, ea_id)
        ec = EnrolmentCredential(ec_id, canonical_station, key.public, now, now + validity_ms, ea_id,
                                 self._ea_key.sign(unsigned.tbs()))
        self.directory.setdefault(canonical_station, []).append(ec)
        self.issued_records.append({"type": "credential", "credential": "EC", "ec_id": f"{ec_id:016x}",
                                    "station": canonical_station, "valid_from_ms": now})
        return ec

    def deactivate(self, canonical_station: int, now: int):
        """Administrative revocation: blocks re-enrolment, revokes existing ECs."""
        self.deactivated.add(canonical_station)
        for ec in self.directory.get(canonical_station, []):
            self.revoke(ec.ec_id, now)

    def revoke(self, cert_id: int, now: int) -> Crl:
        self.crl = self.crl.with_revoked(cert_id, now)
        return self.crl

    def _check_ec(self, ec: EnrolmentCredential, now: int):
        ea = self.trust_store.ea
        if ec.ec_id in self.crl or ec.canonical_station in self.deactivated:
            raise SecurityError("EC_REVOKED", f"EC {ec.ec_id:016x}")
        if (ec.issuer_id != ea.cert_id or not verify_signature(ea.pubkey, ec.signature, ec.tbs())
                or not ec.valid_from <= now < ec.valid_to):
            raise SecurityError("EC_INVALID", f"EC {ec.ec_id:016x}")

    # -- authorization -------------------------------------------------------------

    def issue_tickets(self, ec: EnrolmentCredential, n: int, now: int, kinds: Iterable[MsgKind] = ALL_KINDS,
                      validity_ms: int = AT_VALIDITY_MS, start: Optional[int] = None) -> List[Pseudonym]:
        """``n`` back-to-back tickets starting at ``start`` (default ``now``)."""
        self._check_ec(ec, now)
        if not 0 < validity_ms <= AT_VALIDITY_MS:
            raise SecurityError("INVALID_REQUEST", "ticket validity must be in (0, 5 min]")
        kinds = frozenset(kinds)
        begin = now if start is None else start
        aa_id = self.trust_store.aa.cert_id
        out = []
        for k in range(n):
            key = KeyPair.generate(self._rng)
            at_id = self._rng.getrandbits(64)
            frm, to = begin + k * validity_ms, begin + (k + 1) * validity_ms
            unsigned = AuthorizationTicket(at_id, key.public, kinds, frm, to, aa_id)
            ticket = AuthorizationTicket(at_id, key.public, kinds, frm, to, aa_id, self._aa_key.sign(unsigned.tbs()))
            self.linkability.escrow(at_id, ec.ec_id)
            self.tickets[at_id] = ticket
            self.issued_records.append({"type": "credential", "credential": "AT", "at_id": f"{at_id:016x}",
                                        "valid_from_ms": frm, "valid_to_ms": to})
            out.append(Pseudonym(ticket, key))
        return out


def sign(env: Envelope, pseudonym: Pseudonym, now: int) -> SecurityTrailer:
    ticket = pseudonym.ticket
    if not ticket.contains(now):
        raise SecurityError("AT_EXPIRED", f"AT {ticket.at_id:016x} not valid at {now} ms")
    if env.kind not in ticket.permitted_kinds:
        raise SecurityError("KIND_NOT_PERMITTED", env.kind.name)
    return SecurityTrailer(ticket.at_id, pseudonym.key.sign(canonical_bytes(env)))


def sign_envelope(env: Envelope, pseudonym: Pseudonym, now: int) -> Envelope:
    return env.with_trailer(sign(env, pseudonym, now))


def verify(env: Envelope, trust: TrustStore, crl: Crl, now: int,
           tickets: Mapping[int, AuthorizationTicket]) -> AuthorizationTicket:
    """Raise :class:`SecurityError` unless ``env`` is acceptable; return its ticket."""
    trailer = env.trailer
    if trailer is None:
        raise SecurityError("BAD_SIGNATURE", "unsigned envelope")
    ticket = tickets.get(trailer.at_id)
    if ticket is None or not verify_ticket(ticket, trust):
        raise SecurityError("CHAIN_INVALID", f"AT {trailer.at_id:016x}")
    if not verify_signature(ticket.pubkey, trailer.signature, canonical_bytes(env)):
        raise SecurityError("BAD_SIGNATURE", f"msg {env.msg_id:032x}")
    if not ticket.contains(env.generation_time):
        raise SecurityError("EXPIRED", f"AT {ticket.at_id:016x} at {env.generation_time} ms")
    if ticket.at_id in crl:
        raise SecurityError("REVOKED", f"AT {ticket.at_id:016x}")
    if env.kind not in ticket.permitted_kinds:
        raise SecurityError("KIND_NOT_PERMITTED", env.kind.name)
    return ticket


def rotate(pool: Sequence[Pseudonym], now: int) -> Pseudonym:
    """The pseudonym whose half-open window ``[valid_from, valid_to)`` holds ``now``."""
    if not pool:
        raise SecurityError("POOL_EXHAUSTED", "empty pool")
    starts = [p.ticket.valid_from for p in pool]
    i = bisect.bisect_right(starts, now) - 1
    if i < 0 or not pool[i].ticket.contains(now):
        raise SecurityError("POOL_EXHAUSTED", f"no ticket valid at {now} ms")
    return pool[i]
