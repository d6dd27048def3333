"""Kernel spatial features evaluated at arbitrary (location, hour) queries.

Every feature is an exponential-kernel aggregate over one data source:

* ``StationsMeasures_d_P``  -- kernel-weighted average of station values of
  pollutant P, distance scale d km; the weight mass is ``StationsCounters``.
* ``AtmosphericModel_P``    -- bilinear interpolation of the best-resolution
  covering raster.
* ``Traffic_d``             -- kernel sum of jam * length * functional class.
* ``Roads_d`` / ``MajorRoads_d`` -- kernel-weighted road length.
* ``Industry_d`` / ``Residential_d`` / ``Green_d`` -- kernel-weighted share
  of land-cover samples in the category.
* ``PowerPlants_d``         -- optional kernel sum of capacity * fuel factor.

Two presets fix the assembled vector: ``full`` (26 features) and ``reduced``
(21 features, no traffic or industry terms and a single aggregate station
counter). Exact mode sums over every entity; truncated mode zeroes
contributions beyond ``truncation_factor * d`` kilometres, which bounds the
neglected weight per entity at exp(-10) with the default factor. A bare
cutoff cannot bound the relative error of weight-ratio features when the
only mass sits near the radius, so the computer keeps a query exact
whenever truncation would leave it with less than ``TRUNCATION_MASS_FLOOR``
kernel mass; the scalar operations expose the raw cutoff unchanged.

The module exposes the same mathematics twice: scalar functions over plain
record sequences (easy to check against brute-force sums) and the
vectorised :class:`FeatureComputer` the pipeline uses. Both are pure and
safe for concurrent readers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .geo import GeoPoint, distance_km, distance_km_arrays
from .ingest import (
    POLLUTANTS,
    AtmosphericGrid,
    GridSource,
    LandCoverSample,
    PowerPlant,
    RoadSegment,
    Station,
    StationMeasurement,
    World,
)

POLLUTANT_LABELS = {"no2": "NO2", "o3": "O3", "pm25": "PM25", "pm10": "PM10"}
FUEL_FACTORS = {"coal": 1.0, "oil": 0.6, "gas": 0.3}
PRESETS = ("full", "reduced")

# truncated queries keeping less contributing kernel mass than this stay exact
TRUNCATION_MASS_FLOOR = math.exp(-2)


@dataclass(frozen=True)
class FeatureConfig:
    """Which features are assembled and at which kernel scales."""

    preset: str = "full"
    station_distances_km: tuple = (1.0, 10.0, 100.0)
    counter_distance_km: float = 10.0
    activity_distance_km: float = 0.1
    truncated: bool = False
    truncation_factor: float = 10.0
    include_power_plants: bool = False
    power_plant_distance_km: float = 10.0

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}")
        for d in (*self.station_distances_km, self.counter_distance_km,
                  self.activity_distance_km, self.power_plant_distance_km):
            if d <= 0:
                raise ValueError("kernel distances must be strictly positive")
        if self.truncation_factor <= 0:
            raise ValueError("truncation factor must be positive")

    def truncation_radius_km(self, d_km: float) -> Optional[float]:
        """Query radius in truncated mode; None means sum over everything."""
        return self.truncation_factor * d_km if self.truncated else None

    def feature_names(self) -> tuple:
        ad = f"{self.activity_distance_km:g}"
        cd = f"{self.counter_distance_km:g}"
        names = []
        for d in self.station_distances_km:
            for p in POLLUTANTS:
                names.append(f"StationsMeasures_{d:g}_{POLLUTANT_LABELS[p]}")
        if self.preset == "full":
            for p in POLLUTANTS:
                names.append(f"StationsCounters_{cd}_{POLLUTANT_LABELS[p]}")
        else:
            names.append(f"StationsCounters_{cd}")
        for p in POLLUTANTS:
            names.append(f"AtmosphericModel_{POLLUTANT_LABELS[p]}")
        if self.preset == "full":
            names.append(f"Traffic_{ad}")
        names.append(f"Roads_{ad}")
        names.append(f"MajorRoads_{ad}")
        if self.preset == "full":
            names.append(f"Industry_{ad}")
        names.append(f"Residential_{ad}")
        names.append(f"Green_{ad}")
        if self.include_power_plants:
            names.append(f"PowerPlants_{self.power_plant_distance_km:g}")
        return tuple(names)


@dataclass
class FeatureVector:
    """Ordered feature values with a parallel imputation mask."""

    names: tuple
    values: np.ndarray
    imputed: np.ndarray

    def as_dict(self) -> dict:
        return dict(zip(self.names, self.values.tolist()))

    def __getitem__(self, name: str) -> float:
        return float(self.values[self.names.index(name)])


# ---------------------------------------------------------------------------
# scalar operations over record sequences
# ---------------------------------------------------------------------------

def _station_weights(
    stations: Sequence[Station],
    measurements: Iterable[StationMeasurement],
    l: GeoPoint,
    d_km: float,
    pollutant: Optional[str],
    excluded,
    truncation_radius_km: Optional[float],
):
    """(weight, value) pairs of contributing stations."""
    if d_km <= 0:
        raise ValueError("kernel distance must be positive")
    by_id = {m.station_id: m for m in measurements}
    pairs = []
    for s in stations:
        if s.id in excluded:
            continue
        m = by_id.get(s.id)
        if m is None:
            continue
        if pollutant is None:
            if all(v is None for v in m.values.values()):
                continue
            v = None
        else:
            v = m.values.get(pollutant)
            if v is None:
                continue
        dist = distance_km(l, s.location)
        if truncation_radius_km is not None and dist > truncation_radius_km:
            continue
        pairs.append((math.exp(-dist / d_km), v))
    return pairs


def stations_measures(
    stations: Sequence[Station],
    measurements: Iterable[StationMeasurement],
    l: GeoPoint,
    d_km: float,
    pollutant: str,
    excluded=frozenset(),
    truncation_radius_km: Optional[float] = None,
) -> Optional[float]:
    """Kernel-weighted average of the stations measuring the pollutant.

    Only stations with a present value contribute; None when no weight mass
    reaches the query point.
    """
    pairs = _station_weights(stations, measurements, l, d_km, pollutant,
                             excluded, truncation_radius_km)
    den = sum(w for w, _ in pairs)
    if den <= 0.0:
        return None
    return sum(w * v for w, v in pairs) / den


def stations_counters(
    stations: Sequence[Station],
    measurements: Iterable[StationMeasurement],
    l: GeoPoint,
    d_km: float,
    pollutant: Optional[str] = None,
    excluded=frozenset(),
    truncation_radius_km: Optional[float] = None,
) -> float:
    """Sum of kernel weights of contributing stations (a density proxy).

    With ``pollutant=None`` a station contributes when it measures anything
    at all, which is the aggregate counter the reduced preset uses.
    """
    pairs = _station_weights(stations, measurements, l, d_km, pollutant,
                             excluded, truncation_radius_km)
    return sum(w for w, _ in pairs)


def _grid_sort_key(g: AtmosphericGrid):
    area = g.dlat * g.dlon
    tag = f"res{g.resolution_km:g}_{g.lat0:g}_{g.lon0:g}_{g.nrows}x{g.ncols}"
    return (g.resolution_km, area, tag)


def bilinear(grid: AtmosphericGrid, lat: float, lon: float) -> float:
    """Bilinear interpolation inside the grid hull; edges degrade linearly."""
    x = (lat - grid.lat0) / grid.dlat
    y = (lon - grid.lon0) / grid.dlon
    i0 = min(max(int(math.floor(x)), 0), max(grid.nrows - 2, 0))
    j0 = min(max(int(math.floor(y)), 0), max(grid.ncols - 2, 0))
    fx = x - i0
    fy = y - j0
    v = grid.values
    i1 = min(i0 + 1, grid.nrows - 1)
    j1 = min(j0 + 1, grid.ncols - 1)
    return float(
        v[i0, j0] * (1 - fx) * (1 - fy)
        + v[i1, j0] * fx * (1 - fy)
        + v[i0, j1] * (1 - fx) * fy
        + v[i1, j1] * fx * fy
    )


def atmospheric_model_at(
    grids: Sequence[AtmosphericGrid], l: GeoPoint, pollutant: str
) -> Optional[float]:
    """Interpolated value from the best-resolution raster covering l.

    Ties on nominal resolution break on cell area, then on a geometry tag.
    None when nothing covers the point.
    """
    covering = [
        g for g in grids
        if g.pollutant == pollutant and g.covers(l.lat_deg, l.lon_deg)
    ]
    if not covering:
        return None
    best = min(covering, key=_grid_sort_key)
    return bilinear(best, l.lat_deg, l.lon_deg)


def traffic_feature(
    segments: Sequence[RoadSegment],
    jam_by_segment: Mapping[str, float],
    l: GeoPoint,
    d_km: float,
    truncation_radius_km: Optional[float] = None,
) -> float:
    """Kernel sum of jam * length * functional class over road segments.

    Segments without a jam observation contribute nothing; distances are
    measured to the polyline midpoint.
    """
    if d_km <= 0:
        raise ValueError("kernel distance must be positive")
    total = 0.0
    for seg in segments:
        jam = jam_by_segment.get(seg.id)
        if jam is None:
            continue
        dist = distance_km(l, seg.midpoint())
        if truncation_radius_km is not None and dist > truncation_radius_km:
            continue
        total += math.exp(-dist / d_km) * jam * seg.length_km * seg.functional_class
    return total


def road_density(
    segments: Sequence[RoadSegment],
    l: GeoPoint,
    d_km: float,
    major_only: bool = False,
    truncation_radius_km: Optional[float] = None,
) -> float:
    """Kernel-weighted road length around l, optionally majors only."""
    if d_km <= 0:
        raise ValueError("kernel distance must be positive")
    total = 0.0
    for seg in segments:
        if major_only and not seg.major:
            continue
        dist = distance_km(l, seg.midpoint())
        if truncation_radius_km is not None and dist > truncation_radius_km:
            continue
        total += math.exp(-dist / d_km) * seg.length_km
    return total


def land_share(
    samples: Sequence[LandCoverSample],
    l: GeoPoint,
    d_km: float,
    category: str,
    truncation_radius_km: Optional[float] = None,
) -> Optional[float]:
    """Kernel-weighted fraction of land samples in the category, or None
    when no sample is reachable."""
    if d_km <= 0:
        raise ValueError("kernel distance must be positive")
    num = den = 0.0
    reached = False
    for s in samples:
        dist = distance_km(l, s.location)
        if truncation_radius_km is not None and dist > truncation_radius_km:
            continue
        reached = True
        w = math.exp(-dist / d_km)
        den += w
        if s.category == category:
            num += w
    if not reached or den <= 0.0:
        return None
    return num / den


def power_plant_feature(
    plants: Sequence[PowerPlant],
    l: GeoPoint,
    d_km: float,
    truncation_radius_km: Optional[float] = None,
) -> float:
    """Kernel sum of capacity scaled by how dirty the fuel burns."""
    if d_km <= 0:
        raise ValueError("kernel distance must be positive")
    total = 0.0
    for pl in plants:
        dist = distance_km(l, pl.location)
        if truncation_radius_km is not None and dist > truncation_radius_km:
            continue
        total += math.exp(-dist / d_km) * pl.capacity_mw * FUEL_FACTORS[pl.fuel]
    return total


# ---------------------------------------------------------------------------
# vectorised computation over immutable world arrays
# ---------------------------------------------------------------------------

class FeatureComputer:
    """Evaluates features for arrays of query points against one world.

    Construction precomputes the flat entity arrays; everything else is
    read-only, so one computer can serve concurrent callers.
    """

    def __init__(self, world: World, config: FeatureConfig,
                 impute_means: Optional[np.ndarray] = None):
        self.world = world
        self.config = config
        self.names = config.feature_names()
        if impute_means is not None:
            impute_means = np.asarray(impute_means, dtype=float)
            if impute_means.shape != (len(self.names),):
                raise ValueError("impute means do not match the feature layout")
        self.impute_means = impute_means
        self._land_onehot = {
            c: (world.land_category == c).astype(float)
            for c in ("Industry", "Residential", "Green")
        }
        self._plant_lat = np.array([p.location.lat_deg for p in world.plants])
        self._plant_lon = np.array([p.location.lon_deg for p in world.plants])
        self._plant_strength = np.array(
            [p.capacity_mw * FUEL_FACTORS[p.fuel] for p in world.plants]
        )
        self._sources = sorted(
            world.grid_sources,
            key=lambda s: (s.resolution_km, s.cell_area_deg2, s.source_id),
        )

    # -- kernels ------------------------------------------------------------

    def _weights(self, lats, lons, ent_lat, ent_lon, d_km, truncated,
                 contributing=None):
        """Kernel weight matrix (n_queries, n_entities).

        In truncated mode, weights beyond the radius are zeroed per query
        unless that would leave the query with contributing kernel mass
        below the floor; such queries keep their exact weights.
        """
        dist = distance_km_arrays(
            np.asarray(lats, dtype=float)[:, None],
            np.asarray(lons, dtype=float)[:, None],
            ent_lat[None, :], ent_lon[None, :],
        )
        w = np.exp(-dist / d_km)
        if truncated is None:
            truncated = self.config.truncated
        if not truncated:
            return w
        w_cut = np.where(dist > self.config.truncation_factor * d_km, 0.0, w)
        mass = w_cut.sum(axis=1) if contributing is None else w_cut @ contributing
        return np.where((mass < TRUNCATION_MASS_FLOOR)[:, None], w, w_cut)

    def station_kernel(self, lats, lons, d_km, truncated=None,
                       contributing=None) -> np.ndarray:
        return self._weights(lats, lons, self.world.station_lat,
                             self.world.station_lon, d_km, truncated,
                             contributing)

    def _exclusion_mask(self, excluded) -> np.ndarray:
        keep = np.ones(len(self.world.stations))
        for sid in excluded:
            keep[self.world.station_position(sid)] = 0.0
        return keep

    def _present(self, t, pollutant, excluded) -> np.ndarray:
        h = self.world.hour_position(t)
        if pollutant is None:
            present = np.zeros(len(self.world.stations))
            for p in POLLUTANTS:
                present = np.maximum(
                    present, np.isfinite(self.world.measurements[p][:, h]).astype(float)
                )
        else:
            present = np.isfinite(self.world.measurements[pollutant][:, h]).astype(float)
        return present * self._exclusion_mask(excluded)

    # -- individual features --------------------------------------------------

    def measures(self, lats, lons, t, d_km, pollutant,
                 excluded=frozenset(), truncated=None) -> np.ndarray:
        h = self.world.hour_position(t)
        col = self.world.measurements[pollutant][:, h]
        present = self._present(t, pollutant, excluded)
        w = self.station_kernel(lats, lons, d_km, truncated, present) * present[None, :]
        den = w.sum(axis=1)
        num = w @ np.nan_to_num(col)
        with np.errstate(invalid="ignore"):
            out = num / den
        out[den <= 0.0] = np.nan
        return out

    def counters(self, lats, lons, t, d_km, pollutant=None,
                 excluded=frozenset(), truncated=None) -> np.ndarray:
        present = self._present(t, pollutant, excluded)
        w = self.station_kernel(lats, lons, d_km, truncated, present) * present[None, :]
        return w.sum(axis=1)

    def atmospheric(self, lats, lons, t, pollutant) -> np.ndarray:
        lats = np.asarray(lats, dtype=float)
        lons = np.asarray(lons, dtype=float)
        out = np.full(lats.shape, np.nan)
        for src in self._sources:
            hi = src.hour_index(int(t))
            if hi is None or pollutant not in src.values:
                continue
            todo = np.isnan(out) & src.covers(lats, lons)
            if not todo.any():
                continue
            out[todo] = _bilinear_arrays(
                src.values[pollutant][hi], src.lat0, src.lon0, src.dlat,
                src.dlon, lats[todo], lons[todo],
            )
        return out

    def traffic(self, lats, lons, t, d_km, truncated=None) -> np.ndarray:
        h = self.world.hour_position(t)
        jam = np.nan_to_num(self.world.jam[:, h])
        w = self._weights(lats, lons, self.world.seg_mid_lat,
                          self.world.seg_mid_lon, d_km, truncated)
        return w @ (jam * self.world.seg_length * self.world.seg_fclass)

    def roads(self, lats, lons, d_km, major_only=False, truncated=None) -> np.ndarray:
        length = self.world.seg_length
        if major_only:
            length = length * self.world.seg_major
        w = self._weights(lats, lons, self.world.seg_mid_lat,
                          self.world.seg_mid_lon, d_km, truncated)
        return w @ length

    def land(self, lats, lons, d_km, category, truncated=None) -> np.ndarray:
        w = self._weights(lats, lons, self.world.land_lat,
                          self.world.land_lon, d_km, truncated)
        den = w.sum(axis=1)
        onehot = (self.world.land_category == category).astype(float)
        num = w @ onehot
        with np.errstate(invalid="ignore"):
            out = num / den
        out[den <= 0.0] = np.nan
        return out

    def power_plants(self, lats, lons, d_km, truncated=None) -> np.ndarray:
        if self._plant_lat.size == 0:
            return np.zeros(np.asarray(lats, dtype=float).shape)
        w = self._weights(lats, lons, self._plant_lat, self._plant_lon,
                          d_km, truncated)
        return w @ self._plant_strength

    # -- assembled vectors -----------------------------------------------------

    def compute_matrix(self, lats, lons, t, excluded=frozenset()):
        """Feature matrix (n_points, n_features) plus the imputation mask.

        Missing entries are NaN unless the computer carries imputation
        means, in which case they are filled and flagged.
        """
        lats = np.atleast_1d(np.asarray(lats, dtype=float))
        lons = np.atleast_1d(np.asarray(lons, dtype=float))
        cfg = self.config
        cols = []
        for d in cfg.station_distances_km:
            for p in POLLUTANTS:
                cols.append(self.measures(lats, lons, t, d, p, excluded))
        if cfg.preset == "full":
            for p in POLLUTANTS:
                cols.append(self.counters(lats, lons, t, cfg.counter_distance_km,
                                          p, excluded))
        else:
            cols.append(self.counters(lats, lons, t, cfg.counter_distance_km,
                                      None, excluded))
        for p in POLLUTANTS:
            cols.append(self.atmospheric(lats, lons, t, p))
        ad = cfg.activity_distance_km
        if cfg.preset == "full":
            cols.append(self.traffic(lats, lons, t, ad))
        cols.append(self.roads(lats, lons, ad))
        cols.append(self.roads(lats, lons, ad, major_only=True))
        if cfg.preset == "full":
            cols.append(self.land(lats, lons, ad, "Industry"))
        cols.append(self.land(lats, lons, ad, "Residential"))
        cols.append(self.land(lats, lons, ad, "Green"))
        if cfg.include_power_plants:
            cols.append(self.power_plants(lats, lons, cfg.power_plant_distance_km))
        values = np.column_stack(cols)
        imputed = np.isnan(values)
        if self.impute_means is not None:
            values = np.where(imputed, self.impute_means[None, :], values)
        return values, imputed

    def compute(self, l: GeoPoint, t, excluded=frozenset()) -> FeatureVector:
        values, imputed = self.compute_matrix([l.lat_deg], [l.lon_deg], t, excluded)
        return FeatureVector(self.names, values[0], imputed[0])

    def station_feature_tensor(self, station_positions, hour_positions):
        """Leave-own-station-out features for (station, hour) pairs.

        Returns (n_stations, n_hours, n_features) raw values and the NaN
        mask. Row (i, j) is the feature vector at station i's location with
        station i excluded from every station-derived feature, the rule
        that keeps a row's own measurements out of its inputs.
        """
        w = self.world
        cfg = self.config
        sp = np.asarray(station_positions, dtype=int)
        hp = np.asarray(hour_positions, dtype=int)
        lats = w.station_lat[sp]
        lons = w.station_lon[sp]
        n, H = sp.size, hp.size

        cols = []
        cut_at = math.exp(-cfg.truncation_factor)  # w < cut_at <=> beyond radius

        def kern(d):
            k = self.station_kernel(lats, lons, d, truncated=False)
            k[np.arange(n), sp] = 0.0  # a station never feeds its own row
            k_cut = np.where(k >= cut_at, k, 0.0) if cfg.truncated else None
            return k, k_cut

        def masked(k, k_cut, series, present):
            """Weighted reduction with the per-(row, hour) exactness fallback."""
            den = k @ present
            num = k @ series
            if k_cut is not None:
                den_cut = k_cut @ present
                num_cut = k_cut @ series
                exact = den_cut < TRUNCATION_MASS_FLOOR
                den = np.where(exact, den, den_cut)
                num = np.where(exact, num, num_cut)
            return num, den

        meas0 = {p: np.nan_to_num(w.measurements[p][:, hp]) for p in POLLUTANTS}
        present = {p: np.isfinite(w.measurements[p][:, hp]).astype(float)
                   for p in POLLUTANTS}

        for d in cfg.station_distances_km:
            k, k_cut = kern(d)
            for p in POLLUTANTS:
                num, den = masked(k, k_cut, meas0[p] * present[p], present[p])
                with np.errstate(invalid="ignore"):
                    v = num / den
                v[den <= 0.0] = np.nan
                cols.append(v)
        kc, kc_cut = kern(cfg.counter_distance_km)
        if cfg.preset == "full":
            for p in POLLUTANTS:
                _, den = masked(kc, kc_cut, present[p], present[p])
                cols.append(den)
        else:
            any_present = np.zeros_like(present["no2"])
            for p in POLLUTANTS:
                any_present = np.maximum(any_present, present[p])
            _, den = masked(kc, kc_cut, any_present, any_present)
            cols.append(den)

        for p in POLLUTANTS:
            am = np.full((n, H), np.nan)
            for j, h in enumerate(hp):
                am[:, j] = self.atmospheric(lats, lons, int(w.hours[h]), p)
            cols.append(am)

        ad = cfg.activity_distance_km
        if cfg.preset == "full":
            wk = self._weights(lats, lons, w.seg_mid_lat, w.seg_mid_lon, ad, None)
            strength = wk * (w.seg_length * w.seg_fclass)[None, :]
            cols.append(strength @ np.nan_to_num(w.jam[:, hp]))
        static = []
        static.append(self.roads(lats, lons, ad))
        static.append(self.roads(lats, lons, ad, major_only=True))
        if cfg.preset == "full":
            static.append(self.land(lats, lons, ad, "Industry"))
        static.append(self.land(lats, lons, ad, "Residential"))
        static.append(self.land(lats, lons, ad, "Green"))
        if cfg.include_power_plants:
            static.append(self.power_plants(lats, lons, cfg.power_plant_distance_km))
        for s in static:
            cols.append(np.repeat(s[:, None], H, axis=1))

        values = np.stack(cols, axis=-1)  # (n, H, F)
        return values, np.isnan(values)


def _bilinear_arrays(values, lat0, lon0, dlat, dlon, lats, lons) -> np.ndarray:
    nrows, ncols = values.shape
    x = (lats - lat0) / dlat
    y = (lons - lon0) / dlon
    i0 = np.clip(np.floor(x).astype(int), 0, max(nrows - 2, 0))
    j0 = np.clip(np.floor(y).astype(int), 0, max(ncols - 2, 0))
    fx = x - i0
    fy = y - j0
    i1 = np.minimum(i0 + 1, nrows - 1)
    j1 = np.minimum(j0 + 1, ncols - 1)
    return (values[i0, j0] * (1 - fx) * (1 - fy)
            + values[i1, j0] * fx * (1 - fy)
            + values[i0, j1] * (1 - fx) * fy
            + values[i1, j1] * fx * fy)


def feature_means(values: np.ndarray) -> np.ndarray:
    """Per-feature mean over present entries; 0 for never-observed columns."""
    with np.errstate(invalid="ignore"):
        means = np.nanmean(values.reshape(-1, values.shape[-1]), axis=0)
    return np.nan_to_num(means)


def compute_feature_vector(
    world: World,
    l: GeoPoint,
    t: int,
    config: FeatureConfig,
    excluded=frozenset(),
    impute_means: Optional[np.ndarray] = None,
) -> FeatureVector:
    """One-off assembled feature vector; see :class:`FeatureComputer`."""
    return FeatureComputer(world, config, impute_means).compute(l, t, excluded)
