"""Deterministic synthetic-world generator.

Stands in for the live data feeds: given a seed and a size spec it produces
stations, hourly measurements, coarse atmospheric rasters, a road network
with jam factors, a land-cover lattice and power plants, all drawn from a
hidden ground-truth pollution field that the rest of the pipeline can be
validated against.

The ground truth per pollutant is built from parts the feature pipeline can
plausibly recover:

* a smooth spatial background (base level plus a few Gaussian bumps),
  modulated by a diurnal sinusoid;
* region-wide multiplicative "episode" waves (two slow sinusoids in the
  exponent) that sweep the whole field through calm and polluted spells,
  spreading observations over all exposure categories;
* a road-proximity term: an exponential-kernel sum over road segments,
  scaled by jam factor, functional class and length;
* industrial bumps around the industry zone and power plants;
* ozone runs against the others: its field subtracts the local NO2 anomaly
  and the road term, so streets that raise NO2 depress O3.

Every term is linear in space once the per-point kernel weights are fixed,
which lets the generator average the truth over coarse raster cells exactly
(sub-cell lattice mean of a linear field equals the field of the lattice
mean). The subtraction coefficients for O3 are rescaled when a seed draws
an unusually aggressive layout, keeping all fields strictly positive so the
non-negativity clamp never engages.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geo import BoundingBox, GeoPoint, distance_km_arrays
from .ingest import (
    POLLUTANTS,
    PowerPlant,
    Region,
    RoadSegment,
    Station,
    StationMeasurement,
    TrafficObservation,
    World,
    format_hour_utc,
    group_grids,
    parse_hour_utc,
    polyline_length_km,
    save_land_cover,
    save_measurements,
    save_power_plants,
    save_region,
    save_roads,
    save_stations,
    save_traffic,
    AtmosphericGrid,
    save_atmospheric_grid,
)

_DEFAULT_START = "2018-01-01T00:00Z"


@dataclass(frozen=True)
class SynthSpec:
    """Size and noise knobs for one generated region."""

    region_name: str = "synthland"
    preset: str = "full"
    min_lat: float = 48.0
    min_lon: float = 2.0
    lat_span: float = 0.5
    lon_span: float = 0.7
    n_stations: int = 12
    road_grid: int = 5            # city street grid is road_grid x road_grid nodes
    n_extra_roads: int = 20
    grid_rows: int = 6
    grid_cols: int = 6
    hours: int = 72
    start: str = _DEFAULT_START
    noise_sigma: float = 0.15     # lognormal measurement noise, log-space std
    na_fraction: float = 0.03
    outlier_fraction: float = 0.004
    pollutant_coverage: float = 0.85
    traffic_missing_fraction: float = 0.02
    land_lattice: int = 30
    cell_average_samples: int = 16
    level_scale: float = 1.0      # scales all concentration levels

    def validate(self) -> None:
        if self.n_stations < 1:
            raise ValueError("spec needs at least one station")
        if self.hours < 1:
            raise ValueError("spec needs at least one hour")
        if self.lat_span <= 0 or self.lon_span <= 0:
            raise ValueError("region spans must be positive")
        if self.road_grid < 2:
            raise ValueError("road grid needs at least 2 nodes per axis")
        if self.grid_rows < 2 or self.grid_cols < 2:
            raise ValueError("raster needs at least 2x2 nodes")
        for name in ("noise_sigma", "na_fraction", "outlier_fraction",
                     "traffic_missing_fraction"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not 0 < self.pollutant_coverage <= 1:
            raise ValueError("pollutant_coverage must be in (0, 1]")

    def bbox(self) -> BoundingBox:
        return BoundingBox(
            GeoPoint(self.min_lat, self.min_lon),
            GeoPoint(self.min_lat + self.lat_span, self.min_lon + self.lon_span),
        )


@dataclass
class GroundTruth:
    """The hidden field the synthetic world is sampled from."""

    start_hour: int
    n_hours: int
    base: dict
    bump_lat: dict
    bump_lon: dict
    bump_sigma_km: dict
    bump_amp: dict
    diurnal_amp: dict
    diurnal_phase: dict
    episode_amp: tuple                 # log-space amplitudes of the slow waves
    episode_period_h: tuple
    episode_phase_h: tuple
    road_mid_lat: np.ndarray
    road_mid_lon: np.ndarray
    road_strength: np.ndarray          # functional class * length per segment
    road_scale_km: float
    road_beta: dict                    # positive additive coefficients
    o3_road_coeff: float               # subtracted from O3
    o3_couple: float                   # subtracted NO2-anomaly share
    ind_lat: np.ndarray
    ind_lon: np.ndarray
    ind_sigma_km: np.ndarray
    ind_amp: np.ndarray
    ind_gamma: dict                    # positive additive coefficients
    jam_true: np.ndarray               # (n_segments, n_hours)

    def hour_offsets(self, hours) -> np.ndarray:
        idx = np.asarray(hours, dtype=np.int64) - self.start_hour
        if np.any(idx < 0) or np.any(idx >= self.n_hours):
            raise ValueError("hour outside the generated range")
        return idx

    def _gauss_sum(self, lats, lons, clat, clon, sigma, amp) -> np.ndarray:
        out = np.zeros(np.shape(lats))
        for k in range(len(clat)):
            d = distance_km_arrays(lats, lons, clat[k], clon[k])
            out += amp[k] * np.exp(-0.5 * (d / sigma[k]) ** 2)
        return out

    def industry_field(self, lats, lons) -> np.ndarray:
        return self._gauss_sum(lats, lons, self.ind_lat, self.ind_lon,
                               self.ind_sigma_km, self.ind_amp)

    def road_kernel(self, lats, lons) -> np.ndarray:
        """(n_points, n_segments) kernel weights times segment strength."""
        lats = np.atleast_1d(np.asarray(lats, dtype=float))
        lons = np.atleast_1d(np.asarray(lons, dtype=float))
        d = distance_km_arrays(
            lats[:, None], lons[:, None],
            self.road_mid_lat[None, :], self.road_mid_lon[None, :],
        )
        return np.exp(-d / self.road_scale_km) * self.road_strength[None, :]

    def spatial(self, pollutant: str, lats, lons, industry=None) -> np.ndarray:
        """Static (time-independent) part of the field, before diurnal scaling."""
        if industry is None:
            industry = self.industry_field(lats, lons)
        bumps = self._gauss_sum(lats, lons, self.bump_lat[pollutant],
                                self.bump_lon[pollutant],
                                self.bump_sigma_km[pollutant],
                                self.bump_amp[pollutant])
        if pollutant == "o3":
            no2_anom = (self.spatial("no2", lats, lons, industry=industry)
                        - self.base["no2"])
            return self.base["o3"] + bumps - self.o3_couple * no2_anom
        return self.base[pollutant] + bumps + self.ind_gamma[pollutant] * industry

    def diurnal(self, pollutant: str, hours) -> np.ndarray:
        h = np.asarray(hours, dtype=float) % 24.0
        return 1.0 + self.diurnal_amp[pollutant] * np.sin(
            2.0 * math.pi * (h - self.diurnal_phase[pollutant]) / 24.0
        )

    def episode(self, hours) -> np.ndarray:
        """Region-wide multiplicative swing between calm and polluted spells."""
        h = np.asarray(hours, dtype=float)
        log_f = np.zeros(h.shape)
        for amp, period, phase in zip(self.episode_amp, self.episode_period_h,
                                      self.episode_phase_h):
            log_f += amp * np.sin(2.0 * math.pi * (h - phase) / period)
        return np.exp(log_f)

    def concentrations(self, lats, lons, hours) -> dict:
        """All four fields at the given points and hours: (n_points, n_hours)."""
        lats = np.atleast_1d(np.asarray(lats, dtype=float))
        lons = np.atleast_1d(np.asarray(lons, dtype=float))
        idx = self.hour_offsets(hours)
        road = self.road_kernel(lats, lons) @ self.jam_true[:, idx]
        industry = self.industry_field(lats, lons)
        episode = self.episode(np.asarray(hours))
        out = {}
        for p in POLLUTANTS:
            s = self.diurnal(p, np.asarray(hours))
            static = self.spatial(p, lats, lons, industry=industry)
            if p == "o3":
                f = static[:, None] * s[None, :] - self.o3_road_coeff * road
            else:
                f = static[:, None] * s[None, :] + self.road_beta[p] * road
            out[p] = np.clip(f * episode[None, :], 0.0, None)
        return out

    def concentration(self, pollutant: str, lats, lons, hour: int) -> np.ndarray:
        return self.concentrations(lats, lons, [hour])[pollutant][:, 0]


def _city_grid_segments(rng, bbox: BoundingBox, n_nodes: int) -> list[RoadSegment]:
    """A connected street grid in the central part of the region."""
    c_lat = 0.5 * (bbox.min_lat + bbox.max_lat)
    c_lon = 0.5 * (bbox.min_lon + bbox.max_lon)
    half_lat = 0.19 * (bbox.max_lat - bbox.min_lat)
    half_lon = 0.19 * (bbox.max_lon - bbox.min_lon)
    lat_nodes = np.linspace(c_lat - half_lat, c_lat + half_lat, n_nodes)
    lon_nodes = np.linspace(c_lon - half_lon, c_lon + half_lon, n_nodes)
    segments = []

    def add(seg_id, a, b, arterial):
        fclass = int(rng.integers(4, 6)) if arterial else int(rng.integers(1, 4))
        pl = (a, b)
        segments.append(RoadSegment(seg_id, pl, polyline_length_km(pl),
                                    fclass, fclass >= 4))

    for i in range(n_nodes):
        for j in range(n_nodes - 1):
            a = GeoPoint(lat_nodes[i], lon_nodes[j])
            b = GeoPoint(lat_nodes[i], lon_nodes[j + 1])
            add(f"ch{i}_{j}", a, b, arterial=(i % 3 == 0))
    for i in range(n_nodes - 1):
        for j in range(n_nodes):
            a = GeoPoint(lat_nodes[i], lon_nodes[j])
            b = GeoPoint(lat_nodes[i + 1], lon_nodes[j])
            add(f"cv{i}_{j}", a, b, arterial=(j % 3 == 0))
    return segments


def _extra_segments(rng, bbox: BoundingBox, n: int) -> list[RoadSegment]:
    segments = []
    lat_margin = 0.02 * (bbox.max_lat - bbox.min_lat)
    lon_margin = 0.02 * (bbox.max_lon - bbox.min_lon)
    for k in range(n):
        lat = rng.uniform(bbox.min_lat + lat_margin, bbox.max_lat - lat_margin)
        lon = rng.uniform(bbox.min_lon + lon_margin, bbox.max_lon - lon_margin)
        length = rng.uniform(0.3, 1.5)          # km
        bearing = rng.uniform(0, 2 * math.pi)
        dlat = length * math.cos(bearing) / 110.574
        dlon = (length * math.sin(bearing)
                / (111.320 * math.cos(math.radians(lat))))
        lat2 = min(max(lat + dlat, bbox.min_lat), bbox.max_lat)
        lon2 = min(max(lon + dlon, bbox.min_lon), bbox.max_lon)
        a, b = GeoPoint(lat, lon), GeoPoint(lat2, lon2)
        pl = (a, b)
        plen = polyline_length_km(pl)
        if plen < 1e-4:
            continue
        fclass = int(rng.integers(1, 6))
        segments.append(RoadSegment(f"x{k}", pl, plen, fclass, fclass >= 4))
    return segments


def _jam_matrix(rng, n_segments: int, start_hour: int, n_hours: int) -> np.ndarray:
    """Congestion with morning/evening peaks plus per-segment noise, in [0, 10]."""
    h = (start_hour + np.arange(n_hours)) % 24
    rush = (1.0 * np.exp(-0.5 * ((h - 8.5) / 2.0) ** 2)
            + 1.2 * np.exp(-0.5 * ((h - 18.0) / 2.3) ** 2))
    base = rng.uniform(0.5, 3.0, n_segments)
    peak = rng.uniform(1.5, 5.0, n_segments)
    noise = rng.normal(0.0, 0.5, (n_segments, n_hours))
    jam = base[:, None] + peak[:, None] * rush[None, :] + noise
    return np.clip(jam, 0.0, 10.0)


def generate_synthetic_world(seed: int, spec: SynthSpec = SynthSpec()) -> World:
    """Build a fully populated world, deterministic in (seed, spec)."""
    spec.validate()
    rng = np.random.default_rng(seed)
    bbox = spec.bbox()
    start_hour = parse_hour_utc(spec.start)
    hours = start_hour + np.arange(spec.hours, dtype=np.int64)
    scale = spec.level_scale

    # --- stations ----------------------------------------------------------
    st_lat = rng.uniform(bbox.min_lat, bbox.max_lat, spec.n_stations)
    st_lon = rng.uniform(bbox.min_lon, bbox.max_lon, spec.n_stations)
    stations = [
        Station(f"s{i:03d}", GeoPoint(float(st_lat[i]), float(st_lon[i])),
                spec.region_name)
        for i in range(spec.n_stations)
    ]

    # --- roads --------------------------------------------------------------
    segments = _city_grid_segments(rng, bbox, spec.road_grid)
    segments += _extra_segments(rng, bbox, spec.n_extra_roads)
    mids = [seg.midpoint() for seg in segments]
    mid_lat = np.array([m.lat_deg for m in mids])
    mid_lon = np.array([m.lon_deg for m in mids])
    strength = np.array([seg.functional_class * seg.length_km for seg in segments])

    # --- land cover ----------------------------------------------------------
    n_lat = spec.land_lattice
    n_lon = spec.land_lattice
    glat = bbox.min_lat + (np.arange(n_lat) + 0.5) * (bbox.max_lat - bbox.min_lat) / n_lat
    glon = bbox.min_lon + (np.arange(n_lon) + 0.5) * (bbox.max_lon - bbox.min_lon) / n_lon
    LAT, LON = np.meshgrid(glat, glon, indexing="ij")
    land_lat = LAT.ravel()
    land_lon = LON.ravel()

    ind_center = (rng.uniform(bbox.min_lat + 0.55 * spec.lat_span, bbox.max_lat),
                  rng.uniform(bbox.min_lon + 0.55 * spec.lon_span, bbox.max_lon))
    green_centers = [(rng.uniform(bbox.min_lat, bbox.max_lat),
                      rng.uniform(bbox.min_lon, bbox.max_lon)) for _ in range(2)]
    res_center = (0.5 * (bbox.min_lat + bbox.max_lat),
                  0.5 * (bbox.min_lon + bbox.max_lon))
    span_km = 0.5 * (spec.lat_span * 110.574
                     + spec.lon_span * 111.320 * math.cos(math.radians(res_center[0])))

    def _dist_km(center):
        return distance_km_arrays(land_lat, land_lon, center[0], center[1])

    category = np.full(land_lat.size, "Other", dtype=object)
    category[_dist_km(res_center) < 0.22 * span_km] = "Residential"
    for gc in green_centers:
        category[_dist_km(gc) < 0.10 * span_km] = "Green"
    category[_dist_km(ind_center) < 0.12 * span_km] = "Industry"

    # --- power plants ---------------------------------------------------------
    plants = []
    for k in range(2):
        plat = ind_center[0] + rng.uniform(-0.05, 0.05) * spec.lat_span
        plon = ind_center[1] + rng.uniform(-0.05, 0.05) * spec.lon_span
        plat = min(max(plat, bbox.min_lat), bbox.max_lat)
        plon = min(max(plon, bbox.min_lon), bbox.max_lon)
        plants.append(PowerPlant(
            GeoPoint(float(plat), float(plon)),
            float(rng.uniform(150, 900)),
            "coal" if k == 0 else "gas",
        ))

    # --- ground truth parameters ----------------------------------------------
    jam_true = _jam_matrix(rng, len(segments), start_hour, spec.hours)

    base = {"no2": 16.0 * scale, "o3": 55.0 * scale,
            "pm25": 11.0 * scale, "pm10": 20.0 * scale}
    bump_lat, bump_lon, bump_sig, bump_amp = {}, {}, {}, {}
    for p in POLLUTANTS:
        k = 3
        bump_lat[p] = rng.uniform(bbox.min_lat, bbox.max_lat, k)
        bump_lon[p] = rng.uniform(bbox.min_lon, bbox.max_lon, k)
        bump_sig[p] = rng.uniform(6.0, 14.0, k)
        lo, hi = (-base[p] / 10, base[p] / 10) if p == "o3" else (-base[p] / 6, base[p] / 3)
        bump_amp[p] = rng.uniform(lo, hi, k)

    ind_lat = np.array([ind_center[0]] + [pl.location.lat_deg for pl in plants])
    ind_lon = np.array([ind_center[1]] + [pl.location.lon_deg for pl in plants])
    ind_sigma = np.concatenate([[2.5], rng.uniform(1.5, 2.2, len(plants))])
    ind_amp = np.concatenate(
        [[8.0 * scale], [scale * (4.0 + pl.capacity_mw / 150.0) for pl in plants]]
    )

    truth = GroundTruth(
        start_hour=start_hour,
        n_hours=spec.hours,
        base=base,
        bump_lat=bump_lat, bump_lon=bump_lon,
        bump_sigma_km=bump_sig, bump_amp=bump_amp,
        diurnal_amp={"no2": 0.30, "o3": 0.28, "pm25": 0.22, "pm10": 0.22},
        diurnal_phase={"no2": 3.0, "o3": 9.0, "pm25": 5.0, "pm10": 5.0},
        episode_amp=(0.55, 0.35),
        episode_period_h=(37.0, 13.0),
        episode_phase_h=(float(rng.uniform(0, 37)), float(rng.uniform(0, 13))),
        road_mid_lat=mid_lat, road_mid_lon=mid_lon,
        road_strength=strength,
        road_scale_km=1.2,
        road_beta={"no2": 1.0 * scale, "pm25": 0.35 * scale, "pm10": 0.45 * scale},
        o3_road_coeff=0.45 * scale,
        o3_couple=0.7,
        ind_lat=ind_lat, ind_lon=ind_lon,
        ind_sigma_km=ind_sigma, ind_amp=ind_amp,
        ind_gamma={"no2": 0.55, "pm25": 0.8, "pm10": 1.0},
        jam_true=jam_true,
    )
    _guard_o3_positive(truth, bbox)

    # --- station measurements ----------------------------------------------
    st_truth = truth.concentrations(st_lat, st_lon, hours)
    coverage = rng.random((spec.n_stations, 4)) < spec.pollutant_coverage
    fallback = rng.integers(0, 4, spec.n_stations)
    for i in range(spec.n_stations):
        if not coverage[i].any():
            coverage[i, fallback[i]] = True
    measurements = {}
    for pi, p in enumerate(POLLUTANTS):
        noise = np.exp(rng.normal(0.0, 1.0, (spec.n_stations, spec.hours))
                       * spec.noise_sigma)
        na = rng.random((spec.n_stations, spec.hours)) < spec.na_fraction
        spike = rng.random((spec.n_stations, spec.hours)) < spec.outlier_fraction
        spike_mult = rng.uniform(5.0, 12.0, (spec.n_stations, spec.hours))
        m = st_truth[p] * noise
        m[spike] *= spike_mult[spike]
        m[na] = np.nan
        m[~coverage[:, pi], :] = np.nan
        measurements[p] = m

    # --- coarse rasters: truth averaged over node-centred cells ----------------
    dlat = spec.lat_span / (spec.grid_rows - 1)
    dlon = spec.lon_span / (spec.grid_cols - 1)
    node_lat = bbox.min_lat + np.arange(spec.grid_rows) * dlat
    node_lon = bbox.min_lon + np.arange(spec.grid_cols) * dlon
    ns = spec.cell_average_samples
    off = (np.arange(ns) + 0.5) / ns - 0.5
    sub_lat = (node_lat[:, None] + off[None, :] * dlat).ravel()      # (R*ns,)
    sub_lon = (node_lon[:, None] + off[None, :] * dlon).ravel()      # (C*ns,)
    LAT2, LON2 = np.meshgrid(sub_lat, sub_lon, indexing="ij")
    pts_lat, pts_lon = LAT2.ravel(), LON2.ravel()

    # cell averages of the static parts; the road/jam part averages exactly
    # because it is linear in the per-point kernel row
    def _cell_mean(values_flat):
        v = values_flat.reshape(spec.grid_rows, ns, spec.grid_cols, ns, -1)
        return v.mean(axis=(1, 3))

    industry_pts = truth.industry_field(pts_lat, pts_lon)
    road_pts = truth.road_kernel(pts_lat, pts_lon)                  # (npts, nseg)
    road_cell = _cell_mean(road_pts)                                # (R, C, nseg)
    road_cell_t = road_cell.reshape(-1, len(segments)) @ jam_true   # (R*C, H)

    resolution_km = dlat * 110.574
    episode = truth.episode(hours)
    grid_values = {}
    for p in POLLUTANTS:
        static_pts = truth.spatial(p, pts_lat, pts_lon, industry=industry_pts)
        static_cell = _cell_mean(static_pts[:, None])[..., 0].reshape(-1, 1)
        s = truth.diurnal(p, hours)
        if p == "o3":
            f = static_cell * s[None, :] - truth.o3_road_coeff * road_cell_t
        else:
            f = static_cell * s[None, :] + truth.road_beta[p] * road_cell_t
        grid_values[p] = np.clip(
            (f * episode[None, :]).reshape(spec.grid_rows, spec.grid_cols,
                                           spec.hours), 0.0, None
        ).transpose(2, 0, 1)

    grids = []
    for p in POLLUTANTS:
        for hi, h in enumerate(hours):
            grids.append(AtmosphericGrid(
                p, int(h), bbox.min_lat, bbox.min_lon, dlat, dlon,
                spec.grid_rows, spec.grid_cols, grid_values[p][hi], resolution_km,
            ))

    # --- observed traffic: true jams with a slice knocked out -------------------
    jam_obs = jam_true.copy()
    missing = rng.random(jam_obs.shape) < spec.traffic_missing_fraction
    jam_obs[missing] = np.nan

    region = Region(spec.region_name, bbox, spec.preset)
    return World(
        region=region,
        stations=stations,
        hours=hours,
        measurements=measurements,
        grid_sources=group_grids(grids),
        segments=segments,
        jam=jam_obs,
        land_lat=land_lat,
        land_lon=land_lon,
        land_category=category,
        plants=plants,
        truth=truth,
    )


def _guard_o3_positive(truth: GroundTruth, bbox: BoundingBox) -> None:
    """Rescale the O3 subtraction terms so the field stays strictly positive.

    Probes a dense lattice plus every bump/industry centre; the fields are
    smooth at multi-km scales so the probe minimum is a tight bound.
    """
    lat = np.linspace(bbox.min_lat, bbox.max_lat, 60)
    lon = np.linspace(bbox.min_lon, bbox.max_lon, 60)
    LAT, LON = np.meshgrid(lat, lon, indexing="ij")
    plat = np.concatenate([LAT.ravel(), truth.ind_lat,
                           *[truth.bump_lat[p] for p in POLLUTANTS]])
    plon = np.concatenate([LON.ravel(), truth.ind_lon,
                           *[truth.bump_lon[p] for p in POLLUTANTS]])

    industry = truth.industry_field(plat, plon)
    no2_anom = truth.spatial("no2", plat, plon, industry=industry) - truth.base["no2"]
    o3_own = truth.base["o3"] + truth._gauss_sum(
        plat, plon, truth.bump_lat["o3"], truth.bump_lon["o3"],
        truth.bump_sigma_km["o3"], truth.bump_amp["o3"])
    road_max = truth.road_kernel(plat, plon).sum(axis=1) * 10.0   # jam ceiling

    floor = 0.02 * truth.base["o3"]
    low = 1.0 - truth.diurnal_amp["o3"]
    drawdown = (truth.o3_couple * np.clip(no2_anom, 0.0, None)
                + truth.o3_road_coeff * road_max)
    headroom = o3_own * low - floor
    worst = np.max(drawdown - headroom)
    if worst > 0:
        # shrink both subtraction coefficients by a common factor
        f = float(np.min(headroom / np.maximum(drawdown, 1e-9)))
        f = max(0.0, min(1.0, f))
        truth.o3_couple *= f
        truth.o3_road_coeff *= f


def write_world(world: World, directory) -> None:
    """Write a world as the documented file set (ground truth stays hidden)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    (d / "grids").mkdir(exist_ok=True)

    save_region(world.region, d / "region.json")
    save_stations(world.stations, d / "stations.csv")

    records = []
    for i, sid in enumerate(world.station_ids):
        for hi, h in enumerate(world.hours):
            vals = {}
            any_present = False
            for p in POLLUTANTS:
                v = world.measurements[p][i, hi]
                if np.isnan(v):
                    vals[p] = None
                else:
                    vals[p] = float(v)
                    any_present = True
            if any_present:
                records.append(StationMeasurement(sid, int(h), vals))
    save_measurements(records, d / "measurements.csv")

    for src in world.grid_sources:
        for p, stack in sorted(src.values.items()):
            for hi, h in enumerate(src.hours):
                grid = AtmosphericGrid(
                    p, int(h), src.lat0, src.lon0, src.dlat, src.dlon,
                    src.nrows, src.ncols, stack[hi], src.resolution_km,
                )
                stamp = format_hour_utc(int(h))[:13].replace("-", "")
                save_atmospheric_grid(grid, d / "grids" / f"{p}_{stamp}.csv")

    save_roads(world.segments, d / "roads.geojson")
    obs = []
    for si, seg in enumerate(world.segments):
        for hi, h in enumerate(world.hours):
            j = world.jam[si, hi]
            if np.isfinite(j):
                obs.append(TrafficObservation(seg.id, int(h), float(j)))
    save_traffic(obs, d / "traffic.csv")
    save_land_cover(world.land_samples(), d / "land_cover.csv")
    save_power_plants(world.plants, d / "power_plants.csv")
