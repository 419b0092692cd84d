import math
import random

import pytest
from hypothesis import given, settings, strategies as st

from hybridits.errors import GeodesyError
from hybridits.geodesy import (
    EARTH_RADIUS_M, Circle, GeoPosition, TileId, destination, distance, enu_offset, from_enu, tile_for,
    tiles_covering,
)

# closed form for 0.001 degree of arc on the sphere
ARC_0001 = EARTH_RADIUS_M * math.pi / 180 * 0.001


def test_arc_closed_form_value():
    assert ARC_0001 == pytest.approx(111.1949, abs=1e-3)


def test_distance_zero():
    p = GeoPosition(48.1, 11.5)
    assert distance(p, p) == 0.0


def test_distance_equator_arc():
    assert distance(GeoPosition(0, 0), GeoPosition(0, 0.001)) == pytest.approx(ARC_0001, abs=1e-3)


def test_distance_symmetric_axes_at_equator():
    o = GeoPosition(0, 0)
    assert distance(o, GeoPosition(0.001, 0)) == pytest.approx(distance(o, GeoPosition(0, 0.001)), rel=1e-12)


def test_position_ranges():
    with pytest.raises(GeodesyError):
        GeoPosition(91, 0)
    with pytest.raises(GeodesyError):
        GeoPosition(0, 180)
    GeoPosition(-90, -180)


def test_circle_radius_bounds():
    with pytest.raises(GeodesyError):
        Circle(GeoPosition(0, 0), 0)
    with pytest.raises(GeodesyError):
        Circle(GeoPosition(0, 0), 100_001)


def test_tile_examples():
    # x = floor((lon+180)/360*2^L), y = floor((lat+90)/180*2^L), clamped
    assert tile_for(GeoPosition(0, 0), 0) == TileId(0, 0, 0)
    assert tile_for(GeoPosition(0, -180), 1) == TileId(1, 0, 1)
    assert tile_for(GeoPosition(89.9999, 179.9999), 4) == TileId(4, 15, 15)
    assert tile_for(GeoPosition(90, 0), 3) == TileId(3, 4, 7)


def test_tile_bounds_check():
    with pytest.raises(GeodesyError):
        TileId(2, 4, 0)
    with pytest.raises(GeodesyError):
        TileId(21, 0, 0)


def test_circle_inside_one_tile():
    c = Circle(GeoPosition(48.0, 11.0), 10)
    assert tile_for(c.center, 14) in tiles_covering(c, 14)


def test_whole_level_zero():
    assert tiles_covering(Circle(GeoPosition(0, 0), 100_000), 0) == {TileId(0, 0, 0)}


def random_point_in(c: Circle, rng: random.Random) -> GeoPosition:
    r = c.radius * math.sqrt(rng.random()) * 0.999999
    return destination(c.center, rng.uniform(0, 360), r)


def test_random_points_in_circle_are_covered():
    rng = random.Random(1)
    c = Circle(GeoPosition(48.137, 11.575), 1500)
    tiles = tiles_covering(c, 14)
    for _ in range(1000):
        p = random_point_in(c, rng)
        assert distance(p, c.center) <= c.radius
        assert tile_for(p, 14) in tiles


def test_antimeridian_and_pole_coverage():
    for center in (GeoPosition(10, 179.999), GeoPosition(-10, -179.999), GeoPosition(89.99, 0), GeoPosition(-89.999, 50)):
        c = Circle(center, 5000)
        tiles = tiles_covering(c, 12)
        rng = random.Random(2)
        for _ in range(300):
            assert tile_for(random_point_in(c, rng), 12) in tiles


def test_enu_examples():
    p = GeoPosition(48, 11)
    assert enu_offset(p, p) == (0.0, 0.0)
    e, n = enu_offset(GeoPosition(0, 0), GeoPosition(0, 0.001))
    assert e == pytest.approx(ARC_0001, abs=1e-3)
    assert n == pytest.approx(0.0, abs=1e-9)


def test_enu_too_far():
    with pytest.raises(GeodesyError) as exc:
        enu_offset(GeoPosition(0, 0), GeoPosition(0, 1))
    assert exc.value.code == "TOO_FAR"


def test_enu_round_trip():
    ref = GeoPosition(48, 11)
    p = from_enu(ref, 120.0, -340.0)
    e, n = enu_offset(ref, p)
    assert (e, n) == pytest.approx((120.0, -340.0), abs=1e-6)


lat48 = st.floats(47.9, 48.1)
lon11 = st.floats(10.9, 11.1)


@settings(max_examples=300, deadline=None)
@given(st.floats(0, 360, exclude_max=True), st.floats(1, 999))
def test_enu_linearizes_distance_at_48(bearing, d):
    ref = GeoPosition(48.0, 11.0)
    p = destination(ref, bearing, d)
    e, n = enu_offset(ref, p)
    assert 0.999 <= math.hypot(e, n) / distance(ref, p) <= 1.001


positions = st.builds(GeoPosition, st.floats(-89, 89), st.floats(-180, 180, exclude_max=True))


@settings(max_examples=300, deadline=None)
@given(positions, positions, positions)
def test_triangle_inequality(a, b, c):
    assert distance(a, c) <= (distance(a, b) + distance(b, c)) * (1 + 1e-6) + 1e-6


@settings(max_examples=300, deadline=None)
@given(positions, positions)
def test_distance_symmetric_nonnegative(a, b):
    assert distance(a, b) >= 0
    assert distance(a, b) == pytest.approx(distance(b, a))


@settings(max_examples=200, deadline=None)
@given(positions, st.floats(1, 100_000), st.integers(0, 16), st.floats(0, 360, exclude_max=True), st.floats(0, 1))
def test_covering_superset_property(center, radius, level, bearing, frac):
    c = Circle(center, radius)
    p = destination(center, bearing, radius * frac * 0.999999)
    if distance(p, center) <= radius:
        assert tile_for(p, level) in tiles_covering(c, level)
