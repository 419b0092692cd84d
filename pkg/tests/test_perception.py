import math
import random

import pytest
from hypothesis import given, settings, strategies as st

from hybridits.errors import PerceptionError
from hybridits.geodesy import Circle, GeoPosition, distance, enu_offset, from_enu
from hybridits.messages import Cam, ObjectClass, PerceivedObject
from hybridits.perception import (
    EpmState, GroundTruthObject, IngestAction, Sensor, SensorDetection, accuracy, cam_velocity, end_cycle,
    ingest_cam, ingest_detection, snapshot,
)

REF = GeoPosition(48.0, 11.0)


def det(east, north, conf, source=500, now=0):
    obj = PerceivedObject(0, from_enu(REF, east, north), 0.0, 0.0, conf, ObjectClass.PEDESTRIAN)
    return SensorDetection(source, obj, now)


def test_weighted_fusion_example():
    epm = EpmState(REF)
    r1 = ingest_detection(epm, det(0, 0, 0.5), 0)
    r2 = ingest_detection(epm, det(2, 0, 0.5, source=501), 1000)
    assert r1.action is IngestAction.CREATED
    assert r2 == type(r2)(IngestAction.UPDATED, r1.track_id)
    t = epm.tracks[r1.track_id]
    # (0.5*0 + 0.5*2) / 1 = 1 ; 1 - 0.5*0.5 = 0.75
    assert (t.east, t.north) == pytest.approx((1.0, 0.0), abs=0.01)
    assert t.confidence == pytest.approx(0.75)
    assert t.contributors == 2


def test_duplicate_is_fixed_point():
    epm = EpmState(REF)
    tid = ingest_detection(epm, det(3, 4, 0.6), 0).track_id
    before = (epm.tracks[tid].east, epm.tracks[tid].north)
    r = ingest_detection(epm, det(3, 4, 0.6), 100)
    assert r.action is IngestAction.UPDATED
    assert (epm.tracks[tid].east, epm.tracks[tid].north) == pytest.approx(before, abs=1e-6)


def test_outside_gate_creates():
    epm = EpmState(REF)
    ingest_detection(epm, det(0, 0, 0.8), 0)
    assert ingest_detection(epm, det(10, 0, 0.8), 0).action is IngestAction.CREATED
    assert len(epm.tracks) == 2


def test_out_of_region():
    epm = EpmState(REF, region_radius=1000)
    with pytest.raises(PerceptionError) as exc:
        ingest_detection(epm, det(2000, 0, 0.8), 0)
    assert exc.value.code == "OUT_OF_REGION"


def test_expired_track_not_associated():
    epm = EpmState(REF)
    ingest_detection(epm, det(0, 0, 0.8), 0)
    assert ingest_detection(epm, det(0, 0, 0.8), 1_500_001).action is IngestAction.CREATED


def test_cam_velocity_axes():
    assert cam_velocity(10, 0) == pytest.approx((0.0, 10.0))
    assert cam_velocity(10, 90) == pytest.approx((10.0, 0.0))
    assert cam_velocity(10, 180) == pytest.approx((0.0, -10.0), abs=1e-9)


def test_cam_becomes_vehicle_track():
    epm = EpmState(REF)
    r = ingest_cam(epm, Cam(7, 0, REF, 10.0, 90.0), 0)
    t = epm.tracks[r.track_id]
    assert t.object_class is ObjectClass.VEHICLE
    assert t.confidence == pytest.approx(0.95)
    assert (t.vel_east, t.vel_north) == pytest.approx((10.0, 0.0))


def test_stationary_cam_stream_one_track():
    rng = random.Random(4)
    epm = EpmState(REF)
    for k in range(60):
        p = from_enu(REF, 50 + rng.uniform(-0.3, 0.3), 20 + rng.uniform(-0.3, 0.3))
        ingest_cam(epm, Cam(7, k * 1000, p, 0.0, 0.0), k * 1_000_000)
        end_cycle(epm, k * 1_000_000)
    assert len(epm.tracks) == 1
    assert next(iter(epm.tracks.values())).contributors == 1


def test_snapshot_empty_and_expiry():
    epm = EpmState(REF)
    assert snapshot(epm, 1, 0).objects == ()
    ingest_detection(epm, det(0, 0, 0.9), 0)
    ingest_detection(epm, det(30, 0, 0.9), 1_000_000)
    assert len(snapshot(epm, 1, 1_500_000).objects) == 2
    objs = snapshot(epm, 1, 1_501_000).objects
    assert [o.object_id for o in objs] == [2]


def test_snapshot_ordered_by_track_id():
    epm = EpmState(REF)
    for i in range(5):
        ingest_detection(epm, det(-10 * i, 5, 0.7), 0)
    ids = [o.object_id for o in snapshot(epm, 1, 0).objects]
    assert ids == sorted(ids) == [1, 2, 3, 4, 5]


def test_end_cycle_merges_close_tracks():
    epm = EpmState(REF)
    ingest_detection(epm, det(0, 0, 0.5), 0)
    # second track created far away, then moved artificially close
    tid = ingest_detection(epm, det(10, 0, 0.5), 0).track_id
    epm.tracks[tid].east = 1.0
    assert end_cycle(epm, 0) == 1
    assert len(epm.tracks) == 1


def test_accuracy_greedy():
    truth = [REF, from_enu(REF, 100, 0)]
    objs = [PerceivedObject(1, from_enu(REF, 0.3, 0.4), 0, 0, 0.9),
            PerceivedObject(2, from_enu(REF, 100, 0), 0, 0, 0.9),
            PerceivedObject(3, from_enu(REF, 500, 0), 0, 0, 0.9)]
    rmse, delta = accuracy(objs, truth)
    # positions are quantised to micro-degrees on construction
    expected = math.sqrt((distance(objs[0].pos, truth[0]) ** 2 + distance(objs[1].pos, truth[1]) ** 2) / 2)
    assert rmse == pytest.approx(expected, rel=1e-9)
    assert 0.30 < rmse < 0.40
    assert delta == 1
    assert accuracy([], []) == (0.0, 0)


def test_sensor_noise_statistics():
    rng = random.Random(5)
    s = Sensor(1, Circle(REF, 100), sigma=0.5)
    obj = GroundTruthObject(1, from_enu(REF, 10, 10))
    errs, sq = [], []
    for k in range(4000):
        (d,) = s.detect([obj], k, rng)
        e, n = enu_offset(obj.pos, d.object.pos)
        errs.append(e)
        sq.append(e * e + n * n)
    mean = sum(errs) / len(errs)
    sd = math.sqrt(sum((x - mean) ** 2 for x in errs) / (len(errs) - 1))
    # sigma is the horizontal RMS error: per axis sigma / sqrt(2)
    assert abs(mean) < 0.05 and sd == pytest.approx(0.5 / math.sqrt(2), rel=0.05)
    assert math.sqrt(sum(sq) / len(sq)) == pytest.approx(0.5, rel=0.05)
    assert s.detect([GroundTruthObject(2, from_enu(REF, 200, 0))], 0, rng) == []


confs = st.floats(0.0, 1.0)


@settings(max_examples=200, deadline=None)
@given(st.lists(confs, min_size=1, max_size=12))
def test_confidence_monotone_and_bounded(cs):
    epm = EpmState(REF)
    tid = ingest_detection(epm, det(0, 0, cs[0]), 0).track_id
    prev = epm.tracks[tid].confidence
    for c in cs[1:]:
        ingest_detection(epm, det(0, 0, c), 0)
        cur = epm.tracks[tid].confidence
        assert prev - 1e-12 <= cur <= 1.0
        prev = cur


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(-200, 200), st.floats(-200, 200), st.floats(0.05, 1.0)), max_size=40))
def test_cycle_invariants(points):
    epm = EpmState(REF)
    for e, n, c in points:
        ingest_detection(epm, det(e, n, c), 0)
    end_cycle(epm, 0)
    tracks = list(epm.tracks.values())
    assert len({t.track_id for t in tracks}) == len(tracks)
    for i, a in enumerate(tracks):
        assert 0.0 <= a.confidence <= 1.0
        for b in tracks[i + 1:]:
            assert math.hypot(a.east - b.east, a.north - b.north) >= epm.gate / 2.0


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(-20, 20), st.integers(-20, 20)), min_size=1, max_size=8, unique=True),
       st.integers(1, 4), st.randoms(use_true_random=False))
def test_same_timestamp_order_insensitive_count(cells, per_object, rnd):
    # objects on a 10 m grid, detections scattered well inside the gate
    dets = []
    for cx, cy in cells:
        for _ in range(per_object):
            dets.append(det(10 * cx + rnd.uniform(-0.5, 0.5), 10 * cy + rnd.uniform(-0.5, 0.5), rnd.uniform(0.1, 1)))
    counts = []
    for _ in range(3):
        rnd.shuffle(dets)
        epm = EpmState(REF)
        for d in dets:
            ingest_detection(epm, d, 0)
        end_cycle(epm, 0)
        counts.append(len(epm.tracks))
    assert len(set(counts)) == 1 and counts[0] == len(cells)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(-100, 100), st.floats(-100, 100), st.integers(0, 3000)), max_size=40))
def test_track_accounting(points):
    epm = EpmState(REF)
    ids_seen = []
    now = 0
    for e, n, dt in points:
        now += dt * 1000
        r = ingest_detection(epm, det(e, n, 0.7), now)
        if r.action is IngestAction.CREATED:
            ids_seen.append(r.track_id)
        end_cycle(epm, now)
        assert len(epm.tracks) <= epm.created - epm.removed
        assert all(t.last_update <= now for t in epm.tracks.values())
    assert len(ids_seen) == len(set(ids_seen))
