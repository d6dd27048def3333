import math

import numpy as np
import pytest

from airscape.geo import (
    KM_PER_DEG_LAT,
    KM_PER_DEG_LON_EQUATOR,
    BoundingBox,
    GeoPoint,
    SpatialIndex,
    distance_km,
    distance_km_arrays,
    kernel_weight,
    kernel_weights_from_km,
    radius_query,
)


def brute_force_radius(lats, lons, ids, center, r_km):
    hits = set()
    for la, lo, i in zip(lats, lons, ids):
        if distance_km(center, GeoPoint(la, lo)) <= r_km:
            hits.add(i)
    return hits


class TestGeoPoint:
    def test_valid_ranges(self):
        GeoPoint(0.0, 0.0)
        GeoPoint(-90.0, -180.0)
        GeoPoint(90.0, 179.999)

    @pytest.mark.parametrize(
        "lat,lon",
        [(91.0, 0.0), (-90.5, 0.0), (0.0, 180.0), (0.0, -181.0), (float("nan"), 0.0), (0.0, float("inf"))],
    )
    def test_invalid_rejected(self, lat, lon):
        with pytest.raises(ValueError):
            GeoPoint(lat, lon)


class TestBoundingBox:
    def test_inverted_latitudes_rejected(self):
        with pytest.raises(ValueError):
            BoundingBox(GeoPoint(10.0, 0.0), GeoPoint(5.0, 1.0))

    def test_wide_longitude_span_rejected(self):
        with pytest.raises(ValueError):
            BoundingBox(GeoPoint(0.0, -170.0), GeoPoint(1.0, 20.0))

    def test_contains(self):
        box = BoundingBox(GeoPoint(48.0, 2.0), GeoPoint(48.5, 2.7))
        assert box.contains(GeoPoint(48.2, 2.3))
        assert not box.contains(GeoPoint(47.9, 2.3))


class TestDistance:
    def test_identical_points_zero(self):
        p = GeoPoint(48.3, 2.2)
        assert distance_km(p, p) == 0.0

    def test_one_degree_latitude(self):
        got = distance_km(GeoPoint(0.0, 0.0), GeoPoint(1.0, 0.0))
        assert got == pytest.approx(110.574, abs=1e-9)

    def test_one_degree_longitude_at_45(self):
        # projection formula evaluated by hand: 111.320 * cos(45 deg)
        expected = KM_PER_DEG_LON_EQUATOR * math.cos(math.radians(45.0))
        got = distance_km(GeoPoint(45.0, 0.0), GeoPoint(45.0, 1.0))
        assert got == pytest.approx(expected, rel=1e-12)
        assert got == pytest.approx(78.715, abs=5e-4)

    def test_symmetry_random_pairs(self):
        rng = np.random.default_rng(7)
        for _ in range(300):
            a = GeoPoint(rng.uniform(-80, 80), rng.uniform(-179, 179))
            b = GeoPoint(rng.uniform(-80, 80), rng.uniform(-179, 179))
            assert distance_km(a, b) == distance_km(b, a)
            assert distance_km(a, b) >= 0.0

    def test_array_version_matches_scalar(self):
        rng = np.random.default_rng(11)
        lats = rng.uniform(40, 50, 50)
        lons = rng.uniform(-5, 5, 50)
        c = GeoPoint(45.0, 0.5)
        vec = distance_km_arrays(c.lat_deg, c.lon_deg, lats, lons)
        for i in range(50):
            assert vec[i] == pytest.approx(
                distance_km(c, GeoPoint(lats[i], lons[i])), rel=1e-15
            )


class TestKernel:
    def test_same_point_weight_one(self):
        p = GeoPoint(10.0, 10.0)
        for d in (0.1, 1.0, 100.0):
            assert kernel_weight(p, p, d) == 1.0

    def test_e_folding(self):
        # 10 km apart with d = 10 gives exactly exp(-1)
        a = GeoPoint(0.0, 0.0)
        b = GeoPoint(10.0 / KM_PER_DEG_LAT, 0.0)
        assert kernel_weight(a, b, 10.0) == pytest.approx(math.exp(-1.0), rel=1e-12)

    def test_long_range_vanishes(self):
        a = GeoPoint(0.0, 0.0)
        b = GeoPoint(500.0 / KM_PER_DEG_LAT, 0.0)
        # exp(-500) is ~7e-218: still representable, equal to the analytic value
        assert kernel_weight(a, b, 1.0) == pytest.approx(math.exp(-500.0), rel=1e-9)
        # float64 underflows to an exact zero around exp(-746)
        c = GeoPoint(800.0 / KM_PER_DEG_LAT, 0.0)
        assert kernel_weight(a, c, 1.0) == 0.0

    def test_invalid_scale_rejected(self):
        p = GeoPoint(0.0, 0.0)
        with pytest.raises(ValueError):
            kernel_weight(p, p, 0.0)
        with pytest.raises(ValueError):
            kernel_weight(p, p, -3.0)
        with pytest.raises(ValueError):
            kernel_weights_from_km(np.ones(3), -1.0)

    def test_monotone_in_distance_and_scale(self):
        a = GeoPoint(48.0, 2.0)
        steps = [GeoPoint(48.0, 2.0 + k * 0.01) for k in range(1, 30)]
        for d in (0.5, 5.0):
            w = [kernel_weight(a, b, d) for b in steps]
            assert all(x > y for x, y in zip(w, w[1:]))
        # increasing d raises the weight at any fixed positive distance
        b = steps[10]
        assert kernel_weight(a, b, 1.0) < kernel_weight(a, b, 2.0) < kernel_weight(a, b, 50.0)


class TestSpatialIndex:
    def test_empty_index(self):
        idx = SpatialIndex([], [], [])
        assert radius_query(idx, GeoPoint(0.0, 0.0), 100.0) == set()

    def test_zero_radius_hits_exact_point(self):
        idx = SpatialIndex([48.1], [2.5], ["only"])
        assert radius_query(idx, GeoPoint(48.1, 2.5), 0.0) == {"only"}
        assert radius_query(idx, GeoPoint(48.1, 2.50001), 0.0) == set()

    def test_matches_linear_scan(self):
        rng = np.random.default_rng(123)
        lats = rng.uniform(47.5, 49.0, 1000)
        lons = rng.uniform(1.5, 3.5, 1000)
        ids = [f"p{i}" for i in range(1000)]
        idx = SpatialIndex(lats, lons, ids)
        for _ in range(25):
            center = GeoPoint(rng.uniform(47.5, 49.0), rng.uniform(1.5, 3.5))
            expected = brute_force_radius(lats, lons, ids, center, 25.0)
            assert idx.radius_query(center, 25.0) == expected

    def test_varied_radii_match_linear_scan(self):
        rng = np.random.default_rng(5)
        lats = rng.uniform(-60, 60, 400)
        lons = rng.uniform(-30, 30, 400)
        ids = list(range(400))
        idx = SpatialIndex(lats, lons, ids)
        for r in (0.0, 5.0, 120.0, 2000.0):
            center = GeoPoint(rng.uniform(-60, 60), rng.uniform(-30, 30))
            assert idx.radius_query(center, r) == brute_force_radius(
                lats, lons, ids, center, r
            )

    def test_positions_query(self):
        lats = [48.0, 48.2, 48.4]
        lons = [2.0, 2.0, 2.0]
        idx = SpatialIndex(lats, lons, ["a", "b", "c"])
        pos = idx.query_radius_positions(48.2, 2.0, 1.0)
        assert set(pos) == {1}
