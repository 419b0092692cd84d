"""Escrow of pseudonym-to-enrolment links, readable only with an authorized token."""

from __future__ import annotations

from typing import Dict, FrozenSet, Iterable, List

from ..errors import SecurityError
from .access import LINKABILITY, AccessAuthority, AccessToken


class LinkabilityManager:
    def __init__(self, access: AccessAuthority):
        self._access = access
        self._escrow: Dict[int, int] = {}

    def escrow(self, at_id: int, ec_id: int):
        self._escrow[at_id] = ec_id

    def link(self, pseudonyms: Iterable[int], token: AccessToken, now: int) -> List[FrozenSet[int]]:
        """Partition ``pseudonyms`` by owning enrolment credential.

        Unknown pseudonyms come back as singletons. Groups are ordered by
        their smallest member.
        """
        decision = self._access.authorize(token, LINKABILITY, now)
        if not decision:
            raise SecurityError("UNAUTHORIZED", decision.reason or "")
        groups: Dict[object, set] = {}
        for at_id in set(pseudonyms):
            key = self._escrow.get(at_id, ("unknown", at_id))
            groups.setdefault(key, set()).add(at_id)
        return sorted((frozenset(g) for g in groups.values()), key=min)
