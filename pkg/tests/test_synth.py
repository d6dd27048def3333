import numpy as np
import pytest

from airscape.ingest import POLLUTANTS, load_world
from airscape.synth import SynthSpec, generate_synthetic_world, write_world

SMALL = SynthSpec(n_stations=8, hours=48, grid_rows=5, grid_cols=5,
                  road_grid=4, n_extra_roads=10, land_lattice=18)


def test_same_seed_bit_identical():
    a = generate_synthetic_world(42, SMALL)
    b = generate_synthetic_world(42, SMALL)
    for p in POLLUTANTS:
        np.testing.assert_array_equal(a.measurements[p], b.measurements[p])
        np.testing.assert_array_equal(
            a.grid_sources[0].values[p], b.grid_sources[0].values[p]
        )
    np.testing.assert_array_equal(a.jam, b.jam)
    assert a.stations == b.stations
    assert a.segments == b.segments
    assert a.plants == b.plants
    np.testing.assert_array_equal(a.land_category, b.land_category)


def test_different_seed_differs():
    a = generate_synthetic_world(1, SMALL)
    b = generate_synthetic_world(2, SMALL)
    assert not np.array_equal(a.measurements["no2"], b.measurements["no2"],
                              equal_nan=True)


def test_zero_noise_measurements_equal_truth():
    spec = SynthSpec(n_stations=6, hours=24, noise_sigma=0.0, na_fraction=0.0,
                     outlier_fraction=0.0, pollutant_coverage=1.0,
                     grid_rows=4, grid_cols=4, road_grid=3, n_extra_roads=5,
                     land_lattice=12)
    w = generate_synthetic_world(7, spec)
    lat = w.station_lat
    lon = w.station_lon
    for p in POLLUTANTS:
        expected = w.truth.concentrations(lat, lon, w.hours)[p]
        np.testing.assert_allclose(w.measurements[p], expected, rtol=1e-12)


def test_grid_cells_average_truth():
    # independent oracle: sample the hidden field on a finer lattice inside
    # each node-centred cell and average
    w = generate_synthetic_world(3, SMALL)
    src = w.grid_sources[0]
    rng = np.random.default_rng(0)
    fine = 24
    off = (np.arange(fine) + 0.5) / fine - 0.5
    hours = rng.choice(w.hours, 3, replace=False)
    for p in POLLUTANTS:
        for h in hours:
            hi = src.hour_index(int(h))
            for _ in range(4):
                i = int(rng.integers(0, src.nrows))
                j = int(rng.integers(0, src.ncols))
                cl = src.lat0 + i * src.dlat + off * src.dlat
                co = src.lon0 + j * src.dlon + off * src.dlon
                LAT, LON = np.meshgrid(cl, co, indexing="ij")
                vals = w.truth.concentration(p, LAT.ravel(), LON.ravel(), int(h))
                assert src.values[p][hi, i, j] == pytest.approx(
                    vals.mean(), rel=0.02
                )


def test_truth_non_negative_everywhere():
    w = generate_synthetic_world(11, SMALL)
    rng = np.random.default_rng(5)
    lat = rng.uniform(w.region.bbox.min_lat, w.region.bbox.max_lat, 400)
    lon = rng.uniform(w.region.bbox.min_lon, w.region.bbox.max_lon, 400)
    fields = w.truth.concentrations(lat, lon, w.hours[:24])
    for p in POLLUTANTS:
        assert np.all(fields[p] >= 0.0)
        assert np.all(np.isfinite(fields[p]))


def test_o3_no2_anticorrelated():
    w = generate_synthetic_world(13, SMALL)
    rng = np.random.default_rng(9)
    lat = rng.uniform(w.region.bbox.min_lat, w.region.bbox.max_lat, 600)
    lon = rng.uniform(w.region.bbox.min_lon, w.region.bbox.max_lon, 600)
    h = int(w.hours[10])
    no2 = w.truth.concentration("no2", lat, lon, h)
    o3 = w.truth.concentration("o3", lat, lon, h)
    r = np.corrcoef(no2, o3)[0, 1]
    assert r < 0.0


def test_na_and_outlier_fractions_applied():
    spec = SynthSpec(n_stations=10, hours=200, na_fraction=0.1,
                     outlier_fraction=0.02, pollutant_coverage=1.0,
                     grid_rows=4, grid_cols=4, road_grid=3, n_extra_roads=5,
                     land_lattice=12)
    w = generate_synthetic_world(21, spec)
    m = w.measurements["no2"]
    na_rate = np.isnan(m).mean()
    assert 0.05 < na_rate < 0.2


def test_invalid_spec_rejected():
    with pytest.raises(ValueError):
        generate_synthetic_world(0, SynthSpec(n_stations=0))
    with pytest.raises(ValueError):
        generate_synthetic_world(0, SynthSpec(hours=0))
    with pytest.raises(ValueError):
        generate_synthetic_world(0, SynthSpec(lat_span=-1.0))


def test_world_round_trips_through_files(tmp_path):
    w = generate_synthetic_world(17, SMALL)
    write_world(w, tmp_path)
    back = load_world(tmp_path)
    assert back.station_ids == w.station_ids
    assert back.region == w.region
    assert len(back.segments) == len(w.segments)
    np.testing.assert_array_equal(back.hours, w.hours)
    for p in POLLUTANTS:
        np.testing.assert_array_equal(back.measurements[p], w.measurements[p])
        np.testing.assert_array_equal(
            back.grid_sources[0].values[p], w.grid_sources[0].values[p]
        )
    np.testing.assert_array_equal(back.jam, w.jam)
    np.testing.assert_array_equal(back.land_category, w.land_category)


def test_land_cover_has_all_categories():
    w = generate_synthetic_world(1, SMALL)
    cats = set(w.land_category.tolist())
    assert {"Industry", "Residential", "Green", "Other"} <= cats
