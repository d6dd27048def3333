"""File-based loading, validation and cleaning of every data source.

All inputs are plain text files with documented schemas:

* ``stations.csv``      -- ``station_id,lat,lon,region``
* ``measurements.csv``  -- ``station_id,timestamp,no2,o3,pm25,pm10`` with
  ISO-8601 hour timestamps; an empty cell means "not available".
* ``grids/*.csv``       -- one raster per (pollutant, hour): a header line
  ``pollutant,timestamp,lat0,lon0,dlat,dlon,nrows,ncols,resolution_km``
  followed by ``nrows`` lines of ``ncols`` comma-separated node values.
* ``roads.geojson``     -- LineString features with properties
  ``id,functional_class,major``.
* ``traffic.csv``       -- ``segment_id,timestamp,jam_factor``
* ``land_cover.csv``    -- ``lat,lon,category``
* ``power_plants.csv``  -- ``lat,lon,capacity_mw,fuel``
* ``region.json``       -- name, bounding box and feature preset.

Loaders reject malformed rows with the offending line number. Values that
are present but physically impossible (negative or non-finite
concentrations) are demoted to "not available" and counted, mirroring the
discard policy applied upstream of the feature pipeline.
"""

from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .geo import BoundingBox, GeoPoint, SpatialIndex, distance_km

log = logging.getLogger(__name__)

POLLUTANTS = ("no2", "o3", "pm25", "pm10")
LAND_CATEGORIES = ("Industry", "Residential", "Green", "Other")
FUEL_TYPES = ("coal", "gas", "oil")

_EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)


class IngestError(ValueError):
    """A file violated its documented schema."""


# ---------------------------------------------------------------------------
# timestamps: whole hours UTC, stored internally as integer epoch-hours
# ---------------------------------------------------------------------------

def parse_hour_utc(text: str, line: Optional[int] = None) -> int:
    """Parse an ISO-8601 timestamp aligned to a whole UTC hour."""
    raw = text.strip()
    try:
        iso = raw[:-1] + "+00:00" if raw.endswith("Z") else raw
        dt = datetime.fromisoformat(iso)
    except ValueError:
        raise IngestError(_at(f"unparseable timestamp {raw!r}", line)) from None
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    if dt.minute or dt.second or dt.microsecond:
        raise IngestError(_at(f"timestamp {raw!r} not aligned to the hour", line))
    return int((dt - _EPOCH).total_seconds() // 3600)


def format_hour_utc(hour: int) -> str:
    dt = datetime.fromtimestamp(int(hour) * 3600, tz=timezone.utc)
    return dt.strftime("%Y-%m-%dT%H:00Z")


def _at(msg: str, line: Optional[int]) -> str:
    return msg if line is None else f"line {line}: {msg}"


# ---------------------------------------------------------------------------
# record types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Station:
    id: str
    location: GeoPoint
    region: str


@dataclass(frozen=True)
class StationMeasurement:
    """One station-hour: up to four concentrations in ug/m3, None when absent."""

    station_id: str
    hour: int
    values: Mapping[str, Optional[float]]


@dataclass(frozen=True)
class AtmosphericGrid:
    """A single raster of node values for one pollutant at one hour.

    Node (i, j) sits at (lat0 + i*dlat, lon0 + j*dlon); ``values`` is
    row-major with shape (nrows, ncols).
    """

    pollutant: str
    hour: int
    lat0: float
    lon0: float
    dlat: float
    dlon: float
    nrows: int
    ncols: int
    values: np.ndarray
    resolution_km: float

    def __post_init__(self):
        if self.pollutant not in POLLUTANTS:
            raise IngestError(f"unknown pollutant {self.pollutant!r}")
        if self.dlat <= 0 or self.dlon <= 0:
            raise IngestError("cell sizes must be positive")
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.nrows, self.ncols):
            raise IngestError(
                f"expected {self.nrows}x{self.ncols} values, got shape {v.shape}"
            )
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise IngestError("grid values must be finite and non-negative")
        object.__setattr__(self, "values", v)

    def covers(self, lat: float, lon: float) -> bool:
        return (
            self.lat0 <= lat <= self.lat0 + (self.nrows - 1) * self.dlat
            and self.lon0 <= lon <= self.lon0 + (self.ncols - 1) * self.dlon
        )


@dataclass(frozen=True)
class RoadSegment:
    id: str
    polyline: tuple[GeoPoint, ...]
    length_km: float
    functional_class: int
    major: bool

    def __post_init__(self):
        if len(self.polyline) < 2:
            raise IngestError(f"segment {self.id}: polyline needs at least 2 points")
        if not 1 <= self.functional_class <= 5:
            raise IngestError(
                f"segment {self.id}: functional class {self.functional_class} outside 1..5"
            )
        if self.length_km <= 0:
            raise IngestError(f"segment {self.id}: non-positive length")
        summed = polyline_length_km(self.polyline)
        if summed > 0 and abs(self.length_km - summed) > 0.01 * summed:
            raise IngestError(
                f"segment {self.id}: declared length {self.length_km:.4f} km differs "
                f"from polyline length {summed:.4f} km by more than 1%"
            )

    def midpoint(self) -> GeoPoint:
        return polyline_midpoint(self.polyline)


def polyline_length_km(polyline: Sequence[GeoPoint]) -> float:
    return sum(distance_km(a, b) for a, b in zip(polyline, polyline[1:]))


def polyline_midpoint(polyline: Sequence[GeoPoint]) -> GeoPoint:
    """Point at half the cumulative length along the polyline."""
    total = polyline_length_km(polyline)
    if total == 0.0:
        return polyline[0]
    half = 0.5 * total
    run = 0.0
    for a, b in zip(polyline, polyline[1:]):
        step = distance_km(a, b)
        if run + step >= half and step > 0:
            f = (half - run) / step
            return GeoPoint(
                a.lat_deg + f * (b.lat_deg - a.lat_deg),
                a.lon_deg + f * (b.lon_deg - a.lon_deg),
            )
        run += step
    return polyline[-1]


@dataclass(frozen=True)
class TrafficObservation:
    segment_id: str
    hour: int
    jam_factor: float

    def __post_init__(self):
        if not 0.0 <= self.jam_factor <= 10.0:
            raise IngestError(
                f"jam factor {self.jam_factor} outside [0, 10] for segment {self.segment_id}"
            )


@dataclass(frozen=True)
class LandCoverSample:
    location: GeoPoint
    category: str

    def __post_init__(self):
        if self.category not in LAND_CATEGORIES:
            raise IngestError(f"unknown land cover category {self.category!r}")


@dataclass(frozen=True)
class PowerPlant:
    location: GeoPoint
    capacity_mw: float
    fuel: str

    def __post_init__(self):
        if not (math.isfinite(self.capacity_mw) and self.capacity_mw > 0):
            raise IngestError(f"capacity must be positive and finite, got {self.capacity_mw}")
        if self.fuel not in FUEL_TYPES:
            raise IngestError(f"unknown fuel {self.fuel!r}")


@dataclass(frozen=True)
class Region:
    name: str
    bbox: BoundingBox
    preset: str


# ---------------------------------------------------------------------------
# CSV helpers
# ---------------------------------------------------------------------------

def _read_rows(path, expected_header: str):
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines or lines[0].strip() != expected_header:
        raise IngestError(
            f"{path}: expected header {expected_header!r}, got "
            f"{lines[0].strip()!r}" if lines else f"{path}: empty file"
        )
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        yield lineno, line.split(",")


def _parse_float(text: str, what: str, line: int) -> float:
    try:
        return float(text)
    except ValueError:
        raise IngestError(_at(f"unparseable {what} {text!r}", line)) from None


# ---------------------------------------------------------------------------
# loaders
# ---------------------------------------------------------------------------

def load_stations(path) -> list[Station]:
    out = []
    for lineno, cells in _read_rows(path, "station_id,lat,lon,region"):
        if len(cells) != 4:
            raise IngestError(_at(f"expected 4 cells, got {len(cells)}", lineno))
        sid, lat, lon, region = (c.strip() for c in cells)
        try:
            loc = GeoPoint(_parse_float(lat, "lat", lineno), _parse_float(lon, "lon", lineno))
        except ValueError as e:
            raise IngestError(_at(str(e), lineno)) from None
        out.append(Station(sid, loc, region))
    ids = [s.id for s in out]
    if len(set(ids)) != len(ids):
        raise IngestError(f"{path}: duplicate station ids")
    return out


def load_measurements(path) -> list[StationMeasurement]:
    """Parse station measurements; invalid concentrations become NA.

    Empty cells are NA by schema. Negative or non-finite values are demoted
    to NA and counted in a single warning, since a concentration below zero
    cannot be a real measurement.
    """
    out = []
    demoted = 0
    for lineno, cells in _read_rows(path, "station_id,timestamp,no2,o3,pm25,pm10"):
        if len(cells) != 6:
            raise IngestError(_at(f"expected 6 cells, got {len(cells)}", lineno))
        sid = cells[0].strip()
        hour = parse_hour_utc(cells[1], lineno)
        values: dict[str, Optional[float]] = {}
        for p, cell in zip(POLLUTANTS, cells[2:]):
            cell = cell.strip()
            if not cell:
                values[p] = None
                continue
            v = _parse_float(cell, f"{p} value", lineno)
            if not math.isfinite(v) or v < 0:
                values[p] = None
                demoted += 1
            else:
                values[p] = v
        out.append(StationMeasurement(sid, hour, values))
    if demoted:
        log.warning("load_measurements(%s): demoted %d invalid values to NA", path, demoted)
    return out


def load_atmospheric_grid(path) -> AtmosphericGrid:
    with open(path, "r", encoding="utf-8") as f:
        lines = [ln for ln in f.read().splitlines() if ln.strip()]
    if not lines:
        raise IngestError(f"{path}: empty file")
    head = lines[0].split(",")
    if len(head) != 9:
        raise IngestError(f"{path}: header needs 9 fields, got {len(head)}")
    pollutant = head[0].strip()
    hour = parse_hour_utc(head[1], 1)
    lat0, lon0, dlat, dlon = (_parse_float(h, "header field", 1) for h in head[2:6])
    try:
        nrows, ncols = int(head[6]), int(head[7])
    except ValueError:
        raise IngestError(f"{path}: nrows/ncols must be integers") from None
    resolution_km = _parse_float(head[8], "resolution_km", 1)
    if len(lines) - 1 != nrows:
        raise IngestError(f"{path}: expected {nrows} value rows, got {len(lines) - 1}")
    values = np.empty((nrows, ncols))
    for i, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != ncols:
            raise IngestError(_at(f"expected {ncols} values, got {len(cells)}", i))
        values[i - 2] = [_parse_float(c, "grid value", i) for c in cells]
    return AtmosphericGrid(
        pollutant, hour, lat0, lon0, dlat, dlon, nrows, ncols, values, resolution_km
    )


def load_roads(path) -> list[RoadSegment]:
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    feats = doc.get("features")
    if doc.get("type") != "FeatureCollection" or feats is None:
        raise IngestError(f"{path}: expected a GeoJSON FeatureCollection")
    out = []
    for n, feat in enumerate(feats):
        geom = feat.get("geometry", {})
        if geom.get("type") != "LineString":
            raise IngestError(f"{path}: feature {n}: expected LineString geometry")
        coords = geom.get("coordinates", [])
        try:
            polyline = tuple(GeoPoint(lat, lon) for lon, lat in coords)
        except (ValueError, TypeError) as e:
            raise IngestError(f"{path}: feature {n}: {e}") from None
        props = feat.get("properties", {})
        try:
            seg = RoadSegment(
                id=str(props["id"]),
                polyline=polyline,
                length_km=polyline_length_km(polyline),
                functional_class=int(props["functional_class"]),
                major=bool(props["major"]),
            )
        except KeyError as e:
            raise IngestError(f"{path}: feature {n}: missing property {e}") from None
        out.append(seg)
    return out


def load_traffic(path) -> list[TrafficObservation]:
    out = []
    for lineno, cells in _read_rows(path, "segment_id,timestamp,jam_factor"):
        if len(cells) != 3:
            raise IngestError(_at(f"expected 3 cells, got {len(cells)}", lineno))
        try:
            obs = TrafficObservation(
                cells[0].strip(),
                parse_hour_utc(cells[1], lineno),
                _parse_float(cells[2], "jam factor", lineno),
            )
        except IngestError as e:
            raise IngestError(_at(str(e), lineno)) from None
        out.append(obs)
    return out


def load_land_cover(path) -> list[LandCoverSample]:
    out = []
    for lineno, cells in _read_rows(path, "lat,lon,category"):
        if len(cells) != 3:
            raise IngestError(_at(f"expected 3 cells, got {len(cells)}", lineno))
        try:
            sample = LandCoverSample(
                GeoPoint(
                    _parse_float(cells[0], "lat", lineno),
                    _parse_float(cells[1], "lon", lineno),
                ),
                cells[2].strip(),
            )
        except (IngestError, ValueError) as e:
            raise IngestError(_at(str(e), lineno)) from None
        out.append(sample)
    return out


def load_power_plants(path) -> list[PowerPlant]:
    out = []
    for lineno, cells in _read_rows(path, "lat,lon,capacity_mw,fuel"):
        if len(cells) != 4:
            raise IngestError(_at(f"expected 4 cells, got {len(cells)}", lineno))
        try:
            plant = PowerPlant(
                GeoPoint(
                    _parse_float(cells[0], "lat", lineno),
                    _parse_float(cells[1], "lon", lineno),
                ),
                _parse_float(cells[2], "capacity", lineno),
                cells[3].strip(),
            )
        except (IngestError, ValueError) as e:
            raise IngestError(_at(str(e), lineno)) from None
        out.append(plant)
    return out


def load_region(path) -> Region:
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    try:
        box = doc["bbox"]
        return Region(
            name=doc["name"],
            bbox=BoundingBox(
                GeoPoint(box["min_lat"], box["min_lon"]),
                GeoPoint(box["max_lat"], box["max_lon"]),
            ),
            preset=doc["preset"],
        )
    except KeyError as e:
        raise IngestError(f"{path}: missing key {e}") from None


# ---------------------------------------------------------------------------
# writers (round-trip counterparts of the loaders)
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def save_stations(stations: Iterable[Station], path) -> None:
    lines = ["station_id,lat,lon,region"]
    for s in stations:
        lines.append(f"{s.id},{_fmt(s.location.lat_deg)},{_fmt(s.location.lon_deg)},{s.region}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def save_measurements(measurements: Iterable[StationMeasurement], path) -> None:
    lines = ["station_id,timestamp,no2,o3,pm25,pm10"]
    for m in measurements:
        cells = [m.station_id, format_hour_utc(m.hour)]
        for p in POLLUTANTS:
            v = m.values.get(p)
            cells.append("" if v is None else _fmt(v))
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def save_atmospheric_grid(grid: AtmosphericGrid, path) -> None:
    head = ",".join(
        [
            grid.pollutant,
            format_hour_utc(grid.hour),
            _fmt(grid.lat0),
            _fmt(grid.lon0),
            _fmt(grid.dlat),
            _fmt(grid.dlon),
            str(grid.nrows),
            str(grid.ncols),
            _fmt(grid.resolution_km),
        ]
    )
    lines = [head]
    for row in grid.values:
        lines.append(",".join(_fmt(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def save_roads(segments: Iterable[RoadSegment], path) -> None:
    feats = []
    for seg in segments:
        feats.append(
            {
                "type": "Feature",
                "geometry": {
                    "type": "LineString",
                    "coordinates": [[p.lon_deg, p.lat_deg] for p in seg.polyline],
                },
                "properties": {
                    "id": seg.id,
                    "functional_class": seg.functional_class,
                    "major": seg.major,
                },
            }
        )
    doc = {"type": "FeatureCollection", "features": feats}
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n", encoding="utf-8")


def save_traffic(observations: Iterable[TrafficObservation], path) -> None:
    lines = ["segment_id,timestamp,jam_factor"]
    for o in observations:
        lines.append(f"{o.segment_id},{format_hour_utc(o.hour)},{_fmt(o.jam_factor)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def save_land_cover(samples: Iterable[LandCoverSample], path) -> None:
    lines = ["lat,lon,category"]
    for s in samples:
        lines.append(f"{_fmt(s.location.lat_deg)},{_fmt(s.location.lon_deg)},{s.category}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def save_power_plants(plants: Iterable[PowerPlant], path) -> None:
    lines = ["lat,lon,capacity_mw,fuel"]
    for pl in plants:
        lines.append(
            f"{_fmt(pl.location.lat_deg)},{_fmt(pl.location.lon_deg)},{_fmt(pl.capacity_mw)},{pl.fuel}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def save_region(region: Region, path) -> None:
    doc = {
        "name": region.name,
        "bbox": {
            "min_lat": region.bbox.min_lat,
            "min_lon": region.bbox.min_lon,
            "max_lat": region.bbox.max_lat,
            "max_lon": region.bbox.max_lon,
        },
        "preset": region.preset,
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# outlier removal
# ---------------------------------------------------------------------------

def hampel_filter(values: np.ndarray, window: int = 48, k: float = 6.0) -> np.ndarray:
    """Remove outliers from an hourly series; removed entries become NaN.

    A present value is dropped when it sits more than ``k`` robust standard
    deviations (1.4826 * MAD) from the median of its centred window of
    present values. Windows holding fewer than 3 present values pass their
    values through untouched, and a window of identical values never
    removes anything (zero deviation against a zero threshold).
    """
    if window < 3:
        raise ValueError("window must span at least 3 points")
    if k <= 0:
        raise ValueError("k must be positive")
    x = np.asarray(values, dtype=float)
    out = x.copy()
    half = window // 2
    present = np.isfinite(x)
    for i in np.nonzero(present)[0]:
        lo = max(0, i - half)
        hi = min(x.size, i + half + 1)
        w = x[lo:hi][present[lo:hi]]
        if w.size < 3:
            continue
        med = float(np.median(w))
        mad = float(np.median(np.abs(w - med)))
        if abs(x[i] - med) > k * 1.4826 * mad:
            out[i] = np.nan
    return out


# ---------------------------------------------------------------------------
# the assembled world
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GridSource:
    """All rasters sharing one geometry, stacked over hours per pollutant."""

    source_id: str
    lat0: float
    lon0: float
    dlat: float
    dlon: float
    nrows: int
    ncols: int
    resolution_km: float
    hours: np.ndarray                       # sorted int64 epoch-hours
    values: Mapping[str, np.ndarray]        # pollutant -> (n_hours, nrows, ncols)

    def covers(self, lat, lon) -> np.ndarray:
        lat = np.asarray(lat, dtype=float)
        lon = np.asarray(lon, dtype=float)
        return (
            (lat >= self.lat0)
            & (lat <= self.lat0 + (self.nrows - 1) * self.dlat)
            & (lon >= self.lon0)
            & (lon <= self.lon0 + (self.ncols - 1) * self.dlon)
        )

    def hour_index(self, hour: int) -> Optional[int]:
        i = int(np.searchsorted(self.hours, hour))
        if i < self.hours.size and self.hours[i] == hour:
            return i
        return None

    def grid_at(self, pollutant: str, hour: int) -> Optional[AtmosphericGrid]:
        i = self.hour_index(hour)
        if i is None or pollutant not in self.values:
            return None
        return AtmosphericGrid(
            pollutant, hour, self.lat0, self.lon0, self.dlat, self.dlon,
            self.nrows, self.ncols, self.values[pollutant][i], self.resolution_km,
        )

    @property
    def cell_area_deg2(self) -> float:
        return self.dlat * self.dlon


def group_grids(grids: Sequence[AtmosphericGrid]) -> list[GridSource]:
    """Stack individual rasters into per-geometry sources."""
    by_key: dict[tuple, dict] = {}
    for g in grids:
        key = (g.lat0, g.lon0, g.dlat, g.dlon, g.nrows, g.ncols, g.resolution_km)
        slot = by_key.setdefault(key, {})
        slot.setdefault(g.pollutant, {})[g.hour] = g.values
    sources = []
    for key in sorted(by_key):
        lat0, lon0, dlat, dlon, nrows, ncols, res = key
        slot = by_key[key]
        hours = sorted({h for per_p in slot.values() for h in per_p})
        values = {}
        for p, per_hour in slot.items():
            stack = np.zeros((len(hours), nrows, ncols))
            for i, h in enumerate(hours):
                if h in per_hour:
                    stack[i] = per_hour[h]
            values[p] = stack
        source_id = f"res{res:g}_{lat0:g}_{lon0:g}_{nrows}x{ncols}"
        sources.append(
            GridSource(source_id, lat0, lon0, dlat, dlon, nrows, ncols, res,
                       np.asarray(hours, dtype=np.int64), values)
        )
    return sources


@dataclass
class World:
    """Immutable-by-convention bundle of everything one region knows.

    Measurements and jam factors live in dense (entity, hour) arrays with
    NaN for "not available", which is what the feature pipeline consumes.
    """

    region: Region
    stations: list[Station]
    hours: np.ndarray                        # sorted int64 epoch-hours
    measurements: dict[str, np.ndarray]      # pollutant -> (n_stations, n_hours)
    grid_sources: list[GridSource]
    segments: list[RoadSegment]
    jam: np.ndarray                          # (n_segments, n_hours), NaN = missing
    land_lat: np.ndarray
    land_lon: np.ndarray
    land_category: np.ndarray                # of strings
    plants: list[PowerPlant]
    truth: object = None                     # synthetic worlds carry their generator

    station_ids: list[str] = field(init=False)
    station_lat: np.ndarray = field(init=False)
    station_lon: np.ndarray = field(init=False)
    seg_mid_lat: np.ndarray = field(init=False)
    seg_mid_lon: np.ndarray = field(init=False)
    seg_length: np.ndarray = field(init=False)
    seg_fclass: np.ndarray = field(init=False)
    seg_major: np.ndarray = field(init=False)

    def __post_init__(self):
        self.station_ids = [s.id for s in self.stations]
        self.station_lat = np.array([s.location.lat_deg for s in self.stations])
        self.station_lon = np.array([s.location.lon_deg for s in self.stations])
        mids = [seg.midpoint() for seg in self.segments]
        self.seg_mid_lat = np.array([m.lat_deg for m in mids])
        self.seg_mid_lon = np.array([m.lon_deg for m in mids])
        self.seg_length = np.array([seg.length_km for seg in self.segments])
        self.seg_fclass = np.array([seg.functional_class for seg in self.segments], dtype=float)
        self.seg_major = np.array([seg.major for seg in self.segments], dtype=bool)
        self._station_pos = {sid: i for i, sid in enumerate(self.station_ids)}
        self._hour_pos = {int(h): i for i, h in enumerate(self.hours)}
        self._station_index = SpatialIndex(self.station_lat, self.station_lon,
                                           list(range(len(self.stations))))

    def station_position(self, station_id: str) -> int:
        return self._station_pos[station_id]

    def hour_position(self, hour: int) -> int:
        try:
            return self._hour_pos[int(hour)]
        except KeyError:
            raise KeyError(f"hour {format_hour_utc(hour)} not loaded") from None

    def nearest_hour(self, hour: int) -> int:
        i = int(np.searchsorted(self.hours, hour))
        candidates = [j for j in (i - 1, i) if 0 <= j < self.hours.size]
        return int(min((abs(int(self.hours[j]) - hour), int(self.hours[j])) for j in candidates)[1])

    @property
    def station_index(self) -> SpatialIndex:
        return self._station_index

    def measurements_at(self, hour: int) -> list[StationMeasurement]:
        """Per-station records for one hour, for the scalar feature ops."""
        h = self.hour_position(hour)
        out = []
        for i, sid in enumerate(self.station_ids):
            vals = {}
            for p in POLLUTANTS:
                v = self.measurements[p][i, h]
                vals[p] = None if np.isnan(v) else float(v)
            out.append(StationMeasurement(sid, hour, vals))
        return out

    def jam_at(self, hour: int) -> dict[str, float]:
        h = self.hour_position(hour)
        col = self.jam[:, h]
        return {
            seg.id: float(col[i])
            for i, seg in enumerate(self.segments)
            if np.isfinite(col[i])
        }

    def land_samples(self) -> list[LandCoverSample]:
        return [
            LandCoverSample(GeoPoint(la, lo), c)
            for la, lo, c in zip(self.land_lat, self.land_lon, self.land_category)
        ]

    def with_measurements(self, measurements: dict[str, np.ndarray]) -> "World":
        return World(
            region=self.region, stations=self.stations, hours=self.hours,
            measurements=measurements, grid_sources=self.grid_sources,
            segments=self.segments, jam=self.jam, land_lat=self.land_lat,
            land_lon=self.land_lon, land_category=self.land_category,
            plants=self.plants, truth=self.truth,
        )


def apply_hampel(world: World, window: int = 48, k: float = 6.0) -> World:
    """Return a copy of the world with per-station outliers removed."""
    cleaned = {}
    for p, mat in world.measurements.items():
        out = mat.copy()
        for i in range(mat.shape[0]):
            out[i] = hampel_filter(mat[i], window=window, k=k)
        cleaned[p] = out
    return world.with_measurements(cleaned)


def assemble_world(
    region: Region,
    stations: Sequence[Station],
    measurements: Sequence[StationMeasurement],
    grids: Sequence[AtmosphericGrid],
    segments: Sequence[RoadSegment],
    traffic: Sequence[TrafficObservation],
    land: Sequence[LandCoverSample],
    plants: Sequence[PowerPlant],
    truth: object = None,
) -> World:
    hours = sorted(
        {m.hour for m in measurements}
        | {o.hour for o in traffic}
        | {g.hour for g in grids}
    )
    hours_arr = np.asarray(hours, dtype=np.int64)
    hour_pos = {h: i for i, h in enumerate(hours)}
    station_pos = {s.id: i for i, s in enumerate(stations)}

    meas = {p: np.full((len(stations), len(hours)), np.nan) for p in POLLUTANTS}
    for m in measurements:
        si = station_pos.get(m.station_id)
        if si is None:
            raise IngestError(f"measurement references unknown station {m.station_id!r}")
        hi = hour_pos[m.hour]
        for p in POLLUTANTS:
            v = m.values.get(p)
            if v is not None:
                meas[p][si, hi] = v

    seg_pos = {seg.id: i for i, seg in enumerate(segments)}
    jam = np.full((len(segments), len(hours)), np.nan)
    for o in traffic:
        si = seg_pos.get(o.segment_id)
        if si is None:
            raise IngestError(f"traffic references unknown segment {o.segment_id!r}")
        jam[si, hour_pos[o.hour]] = o.jam_factor

    return World(
        region=region,
        stations=list(stations),
        hours=hours_arr,
        measurements=meas,
        grid_sources=group_grids(grids),
        segments=list(segments),
        jam=jam,
        land_lat=np.array([s.location.lat_deg for s in land]),
        land_lon=np.array([s.location.lon_deg for s in land]),
        land_category=np.array([s.category for s in land], dtype=object),
        plants=list(plants),
        truth=truth,
    )


def load_world(directory) -> World:
    """Assemble a world from a directory written by the synthetic generator."""
    d = Path(directory)
    region = load_region(d / "region.json")
    stations = load_stations(d / "stations.csv")
    measurements = load_measurements(d / "measurements.csv")
    grids = [load_atmospheric_grid(p) for p in sorted((d / "grids").glob("*.csv"))]
    segments = load_roads(d / "roads.geojson")
    traffic = load_traffic(d / "traffic.csv")
    land = load_land_cover(d / "land_cover.csv")
    plants = load_power_plants(d / "power_plants.csv")
    return assemble_world(region, stations, measurements, grids, segments, traffic, land, plants)
