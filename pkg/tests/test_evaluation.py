import numpy as np
import pytest

from airscape.dataset import build_rows, impute_rows, split_stations
from airscape.evaluation import (
    benchmark_predictions,
    compare_transfer,
    evaluate,
    improvement_pct,
    nearest_station_predict,
    partial_dependence,
    select_strategy,
)
from airscape.features import FeatureComputer, FeatureConfig, feature_means
from airscape.geo import GeoPoint, distance_km
from airscape.ingest import POLLUTANTS, Station, StationMeasurement
from airscape.model import MLPModel

T0 = 420768


def _st(i, lat, lon):
    return Station(f"s{i}", GeoPoint(lat, lon), "r")


def _meas(sid, **vals):
    return StationMeasurement(sid, T0, {p: vals.get(p) for p in POLLUTANTS})


class TestNearestStation:
    def test_single_candidate(self):
        stations = [_st(0, 48.0, 2.0)]
        ms = [_meas("s0", no2=33.0)]
        got = nearest_station_predict(stations, ms, GeoPoint(48.5, 2.5), "no2")
        assert got == 33.0

    def test_closest_wins(self):
        stations = [_st(0, 48.009, 2.0), _st(1, 48.045, 2.0)]  # ~1 km and ~5 km
        ms = [_meas("s0", no2=10.0), _meas("s1", no2=99.0)]
        got = nearest_station_predict(stations, ms, GeoPoint(48.0, 2.0), "no2")
        assert got == 10.0

    def test_na_when_nobody_measures(self):
        stations = [_st(0, 48.0, 2.0)]
        ms = [_meas("s0", o3=50.0)]
        assert nearest_station_predict(stations, ms, GeoPoint(48.0, 2.0), "no2") is None

    def test_tie_breaks_on_id(self):
        stations = [_st(1, 48.01, 2.0), _st(0, 47.99, 2.0)]  # equidistant
        ms = [_meas("s1", no2=1.0), _meas("s0", no2=2.0)]
        got = nearest_station_predict(stations, ms, GeoPoint(48.0, 2.0), "no2")
        assert got == 2.0  # s0 < s1

    def test_matches_linear_scan(self):
        rng = np.random.default_rng(3)
        stations = [_st(i, rng.uniform(47.5, 48.5), rng.uniform(1.5, 2.5))
                    for i in range(30)]
        ms = [
            _meas(s.id, pm10=float(rng.uniform(1, 80)) if rng.random() < 0.7 else None)
            for s in stations
        ]
        by_id = {m.station_id: m for m in ms}
        for _ in range(40):
            l = GeoPoint(rng.uniform(47.5, 48.5), rng.uniform(1.5, 2.5))
            best = None
            for s in stations:
                v = by_id[s.id].values.get("pm10")
                if v is None:
                    continue
                k = (distance_km(l, s.location), s.id)
                if best is None or k < best[0]:
                    best = (k, v)
            want = None if best is None else best[1]
            assert nearest_station_predict(stations, ms, l, "pm10") == want


class TestImprovementArithmetic:
    def test_table_row_values(self):
        assert round(improvement_pct(0.355, 0.184), 1) == -48.2
        assert round(improvement_pct(0.530, 0.230), 1) == -56.6

    def test_sign_matches_ordering(self):
        assert improvement_pct(1.0, 0.5) < 0
        assert improvement_pct(0.5, 1.0) > 0
        assert improvement_pct(0.8, 0.8) == 0.0


@pytest.fixture(scope="module")
def eval_setup(small_world):
    w = small_world
    cfg = FeatureConfig()
    split = split_stations(w.stations, seed=0)
    hours = [int(h) for h in w.hours]
    table = build_rows(w, list(split.eval_ids), hours, cfg)
    table = impute_rows(table, feature_means(table.features))
    return w, split, table


class TestEvaluate:
    def test_perfect_predictor_scores_zero(self, eval_setup):
        w, split, table = eval_setup
        perfect = lambda t: np.nan_to_num(t.targets)
        report = evaluate(perfect, w, split.train_ids, table)
        assert report.overall.model_msle == pytest.approx(0.0, abs=1e-15)
        assert report.overall.benchmark_msle > 0
        assert report.overall.improvement == pytest.approx(-100.0)

    def test_benchmark_matches_scalar_oracle(self, eval_setup):
        w, split, table = eval_setup
        bench = benchmark_predictions(w, split.train_ids, table)
        train_set = [s for s in w.stations if s.id in split.train_ids]
        rng = np.random.default_rng(0)
        for i in rng.integers(0, len(table), 25):
            row = table.row(int(i))
            ms = w.measurements_at(row.hour)
            ms = [m for m in ms if m.station_id in split.train_ids]
            si = w.station_position(row.station_id)
            l = GeoPoint(w.station_lat[si], w.station_lon[si])
            for k, p in enumerate(POLLUTANTS):
                want = nearest_station_predict(train_set, ms, l, p)
                if want is None:
                    assert np.isnan(bench[int(i), k])
                else:
                    assert bench[int(i), k] == want

    def test_row_permutation_invariant(self, eval_setup):
        w, split, table = eval_setup
        perm = np.random.default_rng(5).permutation(len(table))
        shuffled = table.subset(perm)
        zero = lambda t: np.zeros((len(t), 4))
        a = evaluate(zero, w, split.train_ids, table)
        b = evaluate(zero, w, split.train_ids, shuffled)
        assert a.overall.model_msle == pytest.approx(b.overall.model_msle, rel=1e-12)
        assert a.overall.benchmark_msle == pytest.approx(b.overall.benchmark_msle,
                                                         rel=1e-12)

    def test_report_render(self, eval_setup, tmp_path):
        w, split, table = eval_setup
        zero = lambda t: np.zeros((len(t), 4))
        report = evaluate(zero, w, split.train_ids, table, fingerprint="abc123")
        text = report.to_text()
        assert "Benchmark" in text and "Improvement" in text and "abc123" in text
        report.to_csv(tmp_path / "r.csv")
        lines = (tmp_path / "r.csv").read_text().splitlines()
        assert lines[0].startswith("label,benchmark_msle")
        assert len(lines) == 6  # header + all + 4 pollutants

    def test_empty_rejected(self, eval_setup):
        w, split, table = eval_setup
        with pytest.raises(ValueError):
            evaluate(lambda t: np.zeros((0, 4)), w, split.train_ids,
                     table.subset(np.array([], dtype=int)))


class TestTransferSelection:
    def test_paper_style_rows(self):
        assert select_strategy(1.000, 1.070, 0.901) == "transfer"
        assert select_strategy(0.375, 0.508, 0.351) == "transfer"
        assert select_strategy(0.332, 0.298, 0.318) == "regional"
        assert select_strategy(0.311, 0.434, 0.305) == "transfer"
        assert select_strategy(0.396, 0.466, 0.387) == "transfer"

    def test_tie_prefers_transfer(self):
        assert select_strategy(0.5, 0.5, 0.5) == "transfer"

    def test_compare_on_identical_rows(self, eval_setup):
        w, split, table = eval_setup
        bias = lambda c: (lambda t: np.full((len(t), 4), c))
        cmp = compare_transfer(bias(10.0), bias(20.0), bias(15.0), table)
        assert cmp.selected == select_strategy(*cmp.as_tuple())
        # identical predictors give identical scores and the transfer tie-break
        same = compare_transfer(bias(12.0), bias(12.0), bias(12.0), table)
        assert same.global_msle == same.regional_msle == same.transfer_msle
        assert same.selected == "transfer"


def _passthrough_model(f, j, slope=2.0, intercept=100.0):
    """relu(x) - relu(-x) == x lets two hidden units carry a signed value."""
    W1 = np.zeros((f, 2))
    W1[j, 0] = 1.0
    W1[j, 1] = -1.0
    W2 = np.eye(2)
    W3 = np.zeros((2, 4))
    W3[0, 0] = slope
    W3[1, 0] = -slope
    return MLPModel(
        feature_names=tuple(f"f{i}" for i in range(f)),
        preset="full",
        norm_mean=np.zeros(f),
        norm_std=np.ones(f),
        params={
            "W1": W1, "b1": np.zeros(2),
            "W2": W2, "b2": np.zeros(2),
            "W3": W3, "b3": np.array([intercept, 50.0, 50.0, 50.0]),
        },
    )


def _toy_table(features):
    n, f = features.shape
    from airscape.dataset import RowTable

    return RowTable(
        feature_names=tuple(f"f{i}" for i in range(f)),
        features=features,
        imputed=np.zeros_like(features, dtype=bool),
        targets=np.full((n, 4), 1.0),
        station_ids=np.array([f"s{i}" for i in range(n)], dtype=object),
        hours=np.full(n, T0, dtype=np.int64),
        regions=np.full(n, "r", dtype=object),
        categories=np.full(n, "Low", dtype=object),
    )


class TestPartialDependence:
    def test_constant_model_flat(self):
        rng = np.random.default_rng(0)
        table = _toy_table(rng.normal(0, 1, (300, 3)))
        m = _passthrough_model(3, j=0, slope=0.0, intercept=42.0)
        grid, means = partial_dependence(m, table, "f1")
        assert np.allclose(means, means[0])
        assert means[0, 0] == pytest.approx(42.0)

    def test_additive_slope_recovered(self):
        rng = np.random.default_rng(1)
        table = _toy_table(rng.normal(5, 2, (500, 4)))
        m = _passthrough_model(4, j=2, slope=2.0, intercept=100.0)
        grid, means = partial_dependence(m, table, "f2")
        slopes = np.diff(means[:, 0]) / np.diff(grid)
        np.testing.assert_allclose(slopes, 2.0, rtol=1e-9)

    def test_unknown_feature_rejected(self):
        table = _toy_table(np.zeros((10, 2)))
        m = _passthrough_model(2, j=0)
        with pytest.raises(ValueError, match="unknown feature"):
            partial_dependence(m, table, "nope")

    def test_explicit_grid_and_determinism(self):
        rng = np.random.default_rng(2)
        table = _toy_table(rng.normal(0, 1, (3000, 3)))
        m = _passthrough_model(3, j=1)
        g1, m1 = partial_dependence(m, table, "f1", seed=9)
        g2, m2 = partial_dependence(m, table, "f1", seed=9)
        np.testing.assert_array_equal(m1, m2)
        grid = np.array([-1.0, 0.0, 1.0])
        g3, m3 = partial_dependence(m, table, "f1", grid=grid)
        np.testing.assert_array_equal(g3, grid)
        assert m3.shape == (3, 4)
