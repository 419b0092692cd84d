import itertools
import random
from collections import Counter

import pytest

from hybridits.errors import CodecError, SecurityError
from hybridits.geodesy import GeoPosition
from hybridits.messages import (
    Cam, Denm, EventKind, MsgKind, SecurityTrailer, canonical_bytes, decode, encode, make_envelope,
)
from hybridits.security import (
    AT_VALIDITY_MS, LINKABILITY, Certificate, Crl, Pki, TrustStore, rotate, sign, sign_envelope, verify,
    verify_chain, verify_ticket,
)
from hybridits.security.crypto import KeyPair, verify_signature

P = GeoPosition(48.0, 11.0)


def cam_env(t_ms=1000, station=7, i=0):
    return make_envelope((station << 96) | i, Cam(station, t_ms, P, 12.5, 90.0), station, t_ms)


def denm_env(t_ms=1000):
    return make_envelope(1 << 96, Denm(7, t_ms, P, EventKind.HAZARD, 100.0, 5000, 0), 7, t_ms)


@pytest.fixture
def pki():
    return Pki(seed=3)


@pytest.fixture
def pool(pki):
    ec = pki.enroll(7, 0)
    return pki.issue_tickets(ec, 20, 0)


def check(pki, env, now=None):
    return verify(env, pki.trust_store, pki.crl, env.generation_time if now is None else now, pki.tickets)


# -- keys and chain --------------------------------------------------------------

def test_keypair_sign_verify():
    k = KeyPair.generate(random.Random(1))
    sig = k.sign(b"abc")
    assert len(k.public) == 32 and len(sig) == 64
    assert verify_signature(k.public, sig, b"abc")
    assert not verify_signature(k.public, sig, b"abd")


def test_chain_verifies(pki):
    assert verify_chain(pki.trust_store)


def test_flipped_aa_cert_fails(pki):
    ts = pki.trust_store
    aa = ts.aa
    bad_key = bytes([aa.pubkey[0] ^ 1]) + aa.pubkey[1:]
    tampered = TrustStore(ts.root, ts.ea, Certificate(aa.cert_id, "AA", bad_key, aa.issuer_id, aa.signature))
    assert not verify_chain(tampered)


def test_pki_deterministic():
    a, b = Pki(seed=11), Pki(seed=11)
    ids = lambda p: (p.trust_store.root.cert_id, p.trust_store.ea.cert_id, p.trust_store.aa.cert_id)
    assert ids(a) == ids(b)
    assert a.trust_store.root.pubkey == b.trust_store.root.pubkey
    assert ids(a) != ids(Pki(seed=12))


# -- enrolment and tickets ---------------------------------------------------------

def test_enroll_twice_distinct(pki):
    e1, e2 = pki.enroll(7, 0), pki.enroll(7, 0)
    assert e1.ec_id != e2.ec_id
    assert pki.directory[7] == [e1, e2]
    assert e1.valid_from < e1.valid_to


def test_deactivated_station(pki):
    ec = pki.enroll(7, 0)
    pki.deactivate(7, 10)
    with pytest.raises(SecurityError) as exc:
        pki.enroll(7, 20)
    assert exc.value.code == "STATION_REVOKED"
    with pytest.raises(SecurityError) as exc:
        pki.issue_tickets(ec, 1, 20)
    assert exc.value.code == "EC_REVOKED"


def test_expired_ec(pki):
    ec = pki.enroll(7, 0, validity_ms=1000)
    with pytest.raises(SecurityError) as exc:
        pki.issue_tickets(ec, 1, 1000)
    assert exc.value.code == "EC_INVALID"


def test_twenty_tickets_cover_100_minutes(pool):
    assert len(pool) == 20
    assert pool[0].ticket.valid_from == 0
    assert pool[-1].ticket.valid_to == 100 * 60 * 1000
    for a, b in zip(pool, pool[1:]):
        assert a.ticket.valid_to == b.ticket.valid_from
        assert a.ticket.valid_to - a.ticket.valid_from == AT_VALIDITY_MS
    assert len({p.at_id for p in pool}) == 20
    assert all(verify_ticket(p.ticket, Pki(seed=3).trust_store) for p in pool)


def test_ticket_validity_capped(pki):
    ec = pki.enroll(7, 0)
    with pytest.raises(SecurityError):
        pki.issue_tickets(ec, 1, 0, validity_ms=AT_VALIDITY_MS + 1)


def test_unlinkable_by_construction(pki, pool):
    aa_id = pki.trust_store.aa.cert_id
    allowed = {"format", "issuer_id", "permitted_kinds"}
    for a, b in itertools.combinations(pool, 2):
        fa, fb = a.ticket.serialized_fields(), b.ticket.serialized_fields()
        shared = {k for k in fa if fa[k] == fb[k]}
        assert shared <= allowed
        # multiset intersection of all serialized values
        common = Counter(fa.values()) & Counter(fb.values())
        assert set(common) <= {fa[k] for k in allowed}
    assert pool[0].ticket.issuer_id == aa_id


def test_ticket_has_no_enrolment_field(pki):
    ec = pki.enroll(7, 0)
    (p,) = pki.issue_tickets(ec, 1, 0)
    blob = p.ticket.tbs() + p.ticket.signature
    assert ec.ec_id.to_bytes(8, "big") not in blob
    assert ec.pubkey not in blob


def test_issued_records_never_pair_at_with_ec(pki, pool):
    for rec in pki.issued_records:
        assert not ("at_id" in rec and "ec_id" in rec)


# -- signing and verification ------------------------------------------------------

def test_sign_verify_ok(pki, pool):
    env = sign_envelope(cam_env(), rotate(pool, 1000), 1000)
    assert check(pki, env).at_id == pool[0].at_id


def test_wire_round_trip_still_verifies(pki, pool):
    env = sign_envelope(cam_env(), rotate(pool, 1000), 1000)
    assert check(pki, decode(encode(env))).at_id == pool[0].at_id


def test_flipped_payload_bit(pki, pool):
    env = sign_envelope(cam_env(), pool[0], 1000)
    forged = make_envelope(env.msg_id, Cam(7, 1000, P, 12.5, 91.0), 7, 1000).with_trailer(env.trailer)
    with pytest.raises(SecurityError) as exc:
        check(pki, forged)
    assert exc.value.code == "BAD_SIGNATURE"


def test_every_body_byte_flip_rejected(pki, pool):
    env = sign_envelope(cam_env(), pool[0], 1000)
    raw = bytearray(encode(env))
    body_end = len(raw) - (1 + 8 + 2 + 64)
    for i in range(2, body_end):
        mutated = bytearray(raw)
        mutated[i] ^= 0x01
        try:
            got = decode(bytes(mutated))
        except CodecError:
            continue
        with pytest.raises(SecurityError) as exc:
            check(pki, got)
        assert exc.value.code in ("BAD_SIGNATURE", "EXPIRED", "KIND_NOT_PERMITTED")


def test_unsigned_rejected(pki):
    with pytest.raises(SecurityError) as exc:
        check(pki, cam_env())
    assert exc.value.code == "BAD_SIGNATURE"


def test_foreign_ticket_chain_invalid(pki):
    other = Pki(seed=99)
    (p,) = other.issue_tickets(other.enroll(7, 0), 1, 0)
    env = sign_envelope(cam_env(), p, 1000)
    with pytest.raises(SecurityError) as exc:
        check(pki, env)
    assert exc.value.code == "CHAIN_INVALID"
    # even if the foreign ticket is smuggled into the directory
    with pytest.raises(SecurityError) as exc:
        verify(env, pki.trust_store, pki.crl, 1000, {p.at_id: p.ticket})
    assert exc.value.code == "CHAIN_INVALID"


def test_revoked(pki, pool):
    env = sign_envelope(cam_env(), pool[0], 1000)
    pki.revoke(pool[0].at_id, 2000)
    with pytest.raises(SecurityError) as exc:
        check(pki, env)
    assert exc.value.code == "REVOKED"


def test_expired_generation_time(pki, pool):
    env = sign_envelope(cam_env(), pool[0], 1000)
    late = make_envelope(env.msg_id, env.payload, 7, AT_VALIDITY_MS).with_trailer(
        sign(make_envelope(env.msg_id, env.payload, 7, AT_VALIDITY_MS), pool[1], AT_VALIDITY_MS))
    assert check(pki, late).at_id == pool[1].at_id
    # a body dated outside the signing ticket's window, signed while the ticket was valid
    stale = make_envelope(3, Cam(7, AT_VALIDITY_MS, P, 1.0, 0.0), 7, AT_VALIDITY_MS)
    stale = stale.with_trailer(sign(stale, pool[0], 1000))
    with pytest.raises(SecurityError) as exc:
        check(pki, stale)
    assert exc.value.code == "EXPIRED"


def test_sign_preconditions(pki):
    ec = pki.enroll(8, 0)
    (cam_only,) = pki.issue_tickets(ec, 1, 0, kinds=[MsgKind.CAM])
    with pytest.raises(SecurityError) as exc:
        sign(denm_env(), cam_only, 1000)
    assert exc.value.code == "KIND_NOT_PERMITTED"
    with pytest.raises(SecurityError) as exc:
        sign(cam_env(), cam_only, AT_VALIDITY_MS)
    assert exc.value.code == "AT_EXPIRED"


def test_verify_kind_not_permitted(pki):
    (cam_only,) = pki.issue_tickets(pki.enroll(8, 0), 1, 0, kinds=[MsgKind.CAM])
    # a DENM signed directly with the CAM-only ticket key, bypassing sign()
    env = denm_env()
    forged = env.with_trailer(SecurityTrailer(cam_only.at_id, cam_only.key.sign(canonical_bytes(env))))
    with pytest.raises(SecurityError) as exc:
        check(pki, forged)
    assert exc.value.code == "KIND_NOT_PERMITTED"


def test_crl_monotone():
    crl = Crl()
    seen = set()
    for i in range(20):
        crl = crl.with_revoked(i * 7, i)
        assert seen <= crl.revoked
        seen = set(crl.revoked)
    assert crl.as_dict()["issued_at_ms"] == 19


# -- rotation --------------------------------------------------------------------

def test_rotate_windows(pool):
    assert rotate(pool, 150_000) is pool[0]
    assert rotate(pool, AT_VALIDITY_MS - 1) is pool[0]
    assert rotate(pool, AT_VALIDITY_MS) is pool[1]
    with pytest.raises(SecurityError) as exc:
        rotate(pool, 100 * 60 * 1000)
    assert exc.value.code == "POOL_EXHAUSTED"
    with pytest.raises(SecurityError):
        rotate([], 0)


def test_rotate_exactly_one_at_a_time(pool):
    rng = random.Random(2)
    for _ in range(500):
        t = rng.randrange(0, 100 * 60 * 1000)
        active = [p for p in pool if p.ticket.contains(t)]
        assert active == [rotate(pool, t)]


# -- access tokens and linkability -------------------------------------------------

def test_token_authorize(pki):
    tok = pki.access.issue_token("op", {LINKABILITY}, 0, ttl_ms=1000)
    assert pki.access.authorize(tok, LINKABILITY, 500)
    assert pki.access.authorize(tok, LINKABILITY, 1000).reason == "EXPIRED"
    assert pki.access.authorize(tok, "REVOKE", 500).reason == "NOT_PERMITTED"
    forged = type(tok)(tok.subject, tok.rights, tok.expiry + 10_000, tok.signature)
    assert pki.access.authorize(forged, LINKABILITY, 500).reason == "BAD_SIGNATURE"
    with pytest.raises(ValueError):
        pki.access.issue_token("op", set(), 0)


def test_link_partition(pki):
    a = pki.issue_tickets(pki.enroll(1, 0), 2, 0)
    b = pki.issue_tickets(pki.enroll(2, 0), 1, 0)
    tok = pki.access.issue_token("op", {LINKABILITY}, 0)
    groups = pki.linkability.link([a[0].at_id, a[1].at_id, b[0].at_id, 12345], tok, 10)
    assert set(groups) == {frozenset({a[0].at_id, a[1].at_id}), frozenset({b[0].at_id}), frozenset({12345})}


def test_link_unauthorized(pki):
    for tok in (pki.access.issue_token("op", {"READ"}, 0), pki.access.issue_token("op", {LINKABILITY}, 0, 10)):
        with pytest.raises(SecurityError) as exc:
            pki.linkability.link([1, 2], tok, 20)
        assert exc.value.code == "UNAUTHORIZED"


def test_link_reconstructs_assignment(pki):
    rng = random.Random(6)
    truth = {}
    for station in range(1, 9):
        ec = pki.enroll(station, 0)
        truth[station] = frozenset(p.at_id for p in pki.issue_tickets(ec, rng.randint(1, 6), 0))
    tok = pki.access.issue_token("op", {LINKABILITY}, 0)
    observed = [a for ids in truth.values() for a in ids]
    rng.shuffle(observed)
    assert set(pki.linkability.link(observed, tok, 1)) == set(truth.values())
