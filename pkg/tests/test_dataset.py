import numpy as np
import pytest

from airscape.dataset import (
    CATEGORIES,
    AqiBreakpoints,
    RowTable,
    build_rows,
    categorize,
    categorize_array,
    impute_rows,
    paqi,
    paqi_array,
    pollutant_aqi,
    split_stations,
    stratified_sample,
)
from airscape.features import FeatureComputer, FeatureConfig, feature_means
from airscape.geo import GeoPoint
from airscape.ingest import Station


@pytest.fixture()
def bp():
    return AqiBreakpoints.default()


class TestPollutantAqi:
    def test_zero_is_zero(self, bp):
        for p in ("no2", "o3", "pm25", "pm10"):
            assert pollutant_aqi(bp, p, 0.0) == 0.0

    def test_node_values(self, bp):
        assert pollutant_aqi(bp, "no2", 40.0) == pytest.approx(50.0)
        assert pollutant_aqi(bp, "pm25", 25.0) == pytest.approx(50.0)

    def test_midpoint_interpolates(self):
        # oracle: straight line between nodes, checked at the midpoint
        custom = AqiBreakpoints(
            nodes={
                "no2": ((0.0, 0.0), (40.0, 50.0), (80.0, 120.0)),
                "o3": ((0.0, 0.0), (100.0, 50.0)),
                "pm25": ((0.0, 0.0), (25.0, 50.0)),
                "pm10": ((0.0, 0.0), (50.0, 50.0)),
            }
        )
        assert pollutant_aqi(custom, "no2", 60.0) == pytest.approx((50 + 120) / 2)
        assert pollutant_aqi(custom, "no2", 20.0) == pytest.approx(25.0)

    def test_extrapolates_last_slope(self, bp):
        # no2 slope is 50/40 = 1.25 per ug/m3
        assert pollutant_aqi(bp, "no2", 80.0) == pytest.approx(100.0)
        assert pollutant_aqi(bp, "no2", 120.0) == pytest.approx(150.0)

    def test_negative_rejected(self, bp):
        with pytest.raises(ValueError):
            pollutant_aqi(bp, "no2", -1.0)

    def test_invalid_tables_rejected(self):
        with pytest.raises(ValueError):
            AqiBreakpoints(nodes={"no2": ((0.0, 0.0),)})
        with pytest.raises(ValueError):
            AqiBreakpoints(nodes={p: ((1.0, 5.0), (2.0, 6.0))
                                  for p in ("no2", "o3", "pm25", "pm10")})

    def test_round_trip_file(self, tmp_path, bp):
        bp.save(tmp_path / "bp.json")
        back = AqiBreakpoints.load(tmp_path / "bp.json")
        assert back == bp


class TestPaqi:
    def test_single_pollutant(self, bp):
        vals = {"no2": 40.0, "o3": None, "pm25": None, "pm10": None}
        assert paqi(bp, vals) == pytest.approx(50.0)

    def test_max_wins(self, bp):
        # no2 24 -> index 30; pm25 35 -> index 70
        vals = {"no2": 24.0, "o3": None, "pm25": 35.0, "pm10": None}
        assert paqi(bp, vals) == pytest.approx(70.0)

    def test_all_missing_errors(self, bp):
        with pytest.raises(ValueError):
            paqi(bp, {"no2": None, "o3": None, "pm25": None, "pm10": None})

    def test_matches_per_pollutant_max(self, bp):
        rng = np.random.default_rng(0)
        for _ in range(100):
            vals = {
                p: (None if rng.random() < 0.4 else float(rng.uniform(0, 150)))
                for p in ("no2", "o3", "pm25", "pm10")
            }
            if all(v is None for v in vals.values()):
                continue
            want = max(pollutant_aqi(bp, p, v) for p, v in vals.items()
                       if v is not None)
            assert paqi(bp, vals) == pytest.approx(want)

    def test_array_path_matches_scalar(self, bp):
        rng = np.random.default_rng(1)
        targets = rng.uniform(0, 120, (50, 4))
        targets[rng.random((50, 4)) < 0.3] = np.nan
        targets[np.isnan(targets).all(axis=1), 0] = 5.0
        got = paqi_array(bp, targets)
        for i in range(50):
            vals = {p: (None if np.isnan(targets[i, j]) else targets[i, j])
                    for j, p in enumerate(("no2", "o3", "pm25", "pm10"))}
            assert got[i] == pytest.approx(paqi(bp, vals))

    def test_monotone_in_each_pollutant(self, bp):
        base = {"no2": 30.0, "o3": 40.0, "pm25": 10.0, "pm10": 20.0}
        i0 = paqi(bp, base)
        for p in base:
            raised = dict(base)
            raised[p] = base[p] + 25.0
            assert paqi(bp, raised) >= i0


class TestCategorize:
    def test_boundaries_left_closed(self, bp):
        assert categorize(bp, 0.0) == "Low"
        assert categorize(bp, 19.999) == "Low"
        assert categorize(bp, 20.0) == "Moderate"
        assert categorize(bp, 50.0) == "High"
        assert categorize(bp, 99.9) == "High"
        assert categorize(bp, 100.0) == "VeryHigh"
        assert categorize(bp, 150.0) == "VeryHigh"

    def test_array_matches_scalar(self, bp):
        idx = np.array([0.0, 5.0, 20.0, 49.0, 50.0, 120.0])
        got = categorize_array(bp, idx)
        assert list(got) == [categorize(bp, v) for v in idx]


class TestSplit:
    def _stations(self, n):
        return [Station(f"s{i:02d}", GeoPoint(48.0 + 0.001 * i, 2.0), "r")
                for i in range(n)]

    def test_ten_stations_eight_two(self):
        split = split_stations(self._stations(10), seed=0)
        assert len(split.train_ids) == 8 and len(split.eval_ids) == 2
        assert set(split.train_ids) | set(split.eval_ids) == {f"s{i:02d}" for i in range(10)}
        assert not set(split.train_ids) & set(split.eval_ids)

    def test_five_stations_four_one(self):
        split = split_stations(self._stations(5), seed=3)
        assert len(split.train_ids) == 4 and len(split.eval_ids) == 1

    def test_deterministic(self):
        a = split_stations(self._stations(12), seed=9)
        b = split_stations(self._stations(12), seed=9)
        assert a == b
        c = split_stations(self._stations(12), seed=10)
        assert c != a

    def test_too_few_rejected(self):
        with pytest.raises(ValueError):
            split_stations(self._stations(4), seed=0)


class TestBuildRows:
    def test_row_counts_and_exclusion(self, small_world):
        w = small_world
        cfg = FeatureConfig()
        comp = FeatureComputer(w, cfg)
        ids = w.station_ids[:4]
        hours = [int(h) for h in w.hours[:6]]
        table = build_rows(w, ids, hours, cfg, computer=comp)
        # row count equals the number of (station, hour) pairs with a target
        expected = 0
        for sid in ids:
            si = w.station_position(sid)
            for h in hours:
                hi = w.hour_position(h)
                if any(np.isfinite(w.measurements[p][si, hi])
                       for p in ("no2", "o3", "pm25", "pm10")):
                    expected += 1
        assert len(table) == expected
        assert set(table.station_ids) <= set(ids)

    def test_leave_own_station_out(self, small_world):
        w = small_world
        cfg = FeatureConfig()
        comp = FeatureComputer(w, cfg)
        table = build_rows(w, w.station_ids[:5], [int(w.hours[10])], cfg,
                           computer=comp)
        for i in range(len(table)):
            row = table.row(i)
            si = w.station_position(row.station_id)
            want, _ = comp.compute_matrix(
                [w.station_lat[si]], [w.station_lon[si]], row.hour,
                excluded={row.station_id},
            )
            np.testing.assert_allclose(table.features[i], want[0],
                                       rtol=1e-10, equal_nan=True)

    def test_all_na_hour_yields_no_row(self):
        from airscape.synth import SynthSpec, generate_synthetic_world

        spec = SynthSpec(n_stations=5, hours=30, na_fraction=0.9,
                         grid_rows=4, grid_cols=4, road_grid=3,
                         n_extra_roads=4, land_lattice=10)
        w = generate_synthetic_world(5, spec)
        cfg = FeatureConfig()
        found = None
        for si, sid in enumerate(w.station_ids):
            for hi in range(len(w.hours)):
                if all(np.isnan(w.measurements[p][si, hi])
                       for p in ("no2", "o3", "pm25", "pm10")):
                    found = (sid, int(w.hours[hi]))
                    break
            if found:
                break
        assert found is not None
        sid, hour = found
        table = build_rows(w, [sid], [hour], cfg)
        assert len(table) == 0

    def test_category_consistent_with_targets(self, small_world):
        w = small_world
        bp = AqiBreakpoints.default()
        table = build_rows(w, w.station_ids[:3], [int(h) for h in w.hours[:5]],
                           FeatureConfig(), breakpoints=bp)
        for i in range(len(table)):
            row = table.row(i)
            assert categorize(bp, paqi(bp, row.targets)) == row.category


class TestImpute:
    def test_impute_fills_and_flags(self, small_world):
        w = small_world
        cfg = FeatureConfig()
        table = build_rows(w, w.station_ids[:6], [int(h) for h in w.hours[:8]], cfg)
        means = feature_means(table.features)
        filled = impute_rows(table, means)
        assert np.isfinite(filled.features).all()
        assert (filled.imputed == np.isnan(table.features)).all()
        # untouched entries preserved exactly
        ok = ~np.isnan(table.features)
        np.testing.assert_array_equal(filled.features[ok], table.features[ok])


def _toy_table(categories):
    n = len(categories)
    f = np.arange(n, dtype=float).reshape(-1, 1)
    return RowTable(
        feature_names=("x",),
        features=f,
        imputed=np.zeros_like(f, dtype=bool),
        targets=np.full((n, 4), 1.0),
        station_ids=np.array([f"s{i}" for i in range(n)], dtype=object),
        hours=np.arange(n, dtype=np.int64) + 420768,
        regions=np.full(n, "r", dtype=object),
        categories=np.array(categories, dtype=object),
    )


class TestStratifiedSample:
    def test_one_per_category(self):
        t = _toy_table(["Low", "Moderate", "High", "VeryHigh", "Low"])
        s = stratified_sample(t, 1, seed=0)
        assert len(s) == 4
        assert sorted(s.categories) == sorted(CATEGORIES)

    def test_exact_counts_and_determinism(self):
        rng = np.random.default_rng(2)
        cats = [CATEGORIES[i] for i in rng.integers(0, 4, 200)]
        t = _toy_table(cats)
        a = stratified_sample(t, 50, seed=7)
        b = stratified_sample(t, 50, seed=7)
        assert len(a) == 200
        for c in CATEGORIES:
            assert (a.categories == c).sum() == 50
        np.testing.assert_array_equal(a.features, b.features)
        np.testing.assert_array_equal(a.station_ids, b.station_ids)

    def test_single_row_category_repeats(self):
        t = _toy_table(["Low", "Moderate", "High", "VeryHigh"])
        s = stratified_sample(t, 100, seed=1)
        low_rows = s.features[s.categories == "Low"]
        assert len(low_rows) == 100
        assert (low_rows == low_rows[0]).all()

    def test_empty_category_named_in_error(self):
        t = _toy_table(["Low", "Moderate", "High", "High"])
        with pytest.raises(ValueError, match="VeryHigh"):
            stratified_sample(t, 5, seed=0)


class TestRowTableCsv:
    def test_round_trip(self, small_world, tmp_path):
        w = small_world
        cfg = FeatureConfig()
        table = build_rows(w, w.station_ids[:4], [int(h) for h in w.hours[:6]], cfg)
        table = impute_rows(table, feature_means(table.features))
        table.to_csv(tmp_path / "rows.csv")
        back = RowTable.from_csv(tmp_path / "rows.csv")
        assert back.feature_names == table.feature_names
        np.testing.assert_array_equal(back.features, table.features)
        np.testing.assert_array_equal(back.targets, table.targets)
        assert list(back.station_ids) == list(table.station_ids)
        np.testing.assert_array_equal(back.hours, table.hours)
        assert list(back.categories) == list(table.categories)

    def test_deterministic_bytes(self, small_world, tmp_path):
        w = small_world
        cfg = FeatureConfig()
        table = build_rows(w, w.station_ids[:4], [int(h) for h in w.hours[:6]], cfg)
        table = impute_rows(table, feature_means(table.features))
        table.to_csv(tmp_path / "a.csv")
        table.to_csv(tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
