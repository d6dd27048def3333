"""Training and evaluation datasets.

A data row is one (station, hour) pair: the feature vector at the
station's location with the station itself excluded from all
station-derived features, the four measured concentrations as targets, and
an exposure category. Categories come from a configurable piecewise-linear
health index (per pollutant, combined by maximum over the pollutants that
were actually measured); they drive balanced with-replacement sampling so
rare high-pollution rows are not drowned out by clean air.

Default index anchors map WHO 2005 guideline concentrations to index 50
(NO2 40, O3 100, PM2.5 25, PM10 50 ug/m3) with linear continuation above;
any other table can be loaded from a JSON file. Absolute index values are
only meaningful relative to the configured anchors.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .features import FeatureComputer, FeatureConfig, FeatureVector
from .ingest import POLLUTANTS, Station, World, format_hour_utc, parse_hour_utc

CATEGORIES = ("Low", "Moderate", "High", "VeryHigh")

_WHO_INDEX_50 = {"no2": 40.0, "o3": 100.0, "pm25": 25.0, "pm10": 50.0}


@dataclass(frozen=True)
class AqiBreakpoints:
    """Per-pollutant (concentration, index) nodes plus category thresholds."""

    nodes: Mapping[str, tuple]
    thresholds: tuple = (20.0, 50.0, 100.0)

    def __post_init__(self):
        for p in POLLUTANTS:
            if p not in self.nodes:
                raise ValueError(f"missing breakpoints for {p}")
            pts = self.nodes[p]
            if len(pts) < 2:
                raise ValueError(f"{p}: need at least two nodes")
            if pts[0] != (0.0, 0.0):
                raise ValueError(f"{p}: first node must anchor (0, 0)")
            concs = [c for c, _ in pts]
            idxs = [i for _, i in pts]
            if any(b <= a for a, b in zip(concs, concs[1:])):
                raise ValueError(f"{p}: concentrations must strictly increase")
            if any(b <= a for a, b in zip(idxs, idxs[1:])):
                raise ValueError(f"{p}: index values must strictly increase")
        t = self.thresholds
        if len(t) != 3 or not (0 < t[0] < t[1] < t[2]):
            raise ValueError("thresholds must be three increasing positive values")

    @classmethod
    def default(cls) -> "AqiBreakpoints":
        return cls(nodes={p: ((0.0, 0.0), (c, 50.0)) for p, c in _WHO_INDEX_50.items()})

    @classmethod
    def load(cls, path) -> "AqiBreakpoints":
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
        nodes = {
            p: tuple((float(c), float(i)) for c, i in doc["nodes"][p])
            for p in doc["nodes"]
        }
        return cls(nodes=nodes, thresholds=tuple(doc.get("thresholds", (20.0, 50.0, 100.0))))

    def save(self, path) -> None:
        doc = {
            "nodes": {p: [[c, i] for c, i in pts] for p, pts in self.nodes.items()},
            "thresholds": list(self.thresholds),
        }
        Path(path).write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n",
                              encoding="utf-8")


def pollutant_aqi(bp: AqiBreakpoints, pollutant: str, concentration: float) -> float:
    """Piecewise-linear index; extrapolates the last segment's slope."""
    return float(pollutant_aqi_array(bp, pollutant, np.asarray([concentration]))[0])


def pollutant_aqi_array(bp: AqiBreakpoints, pollutant: str, conc) -> np.ndarray:
    conc = np.asarray(conc, dtype=float)
    finite = conc[np.isfinite(conc)]
    if np.any(finite < 0):
        raise ValueError("concentrations must be non-negative")
    pts = bp.nodes[pollutant]
    xs = np.array([c for c, _ in pts])
    ys = np.array([i for _, i in pts])
    out = np.interp(conc, xs, ys)
    slope = (ys[-1] - ys[-2]) / (xs[-1] - xs[-2])
    beyond = conc > xs[-1]
    out = np.where(beyond, ys[-1] + slope * (conc - xs[-1]), out)
    return out


def paqi(bp: AqiBreakpoints, values: Mapping[str, Optional[float]]) -> float:
    """Overall index: maximum over the pollutants with a present value."""
    idxs = [
        pollutant_aqi(bp, p, v)
        for p, v in values.items()
        if v is not None and p in bp.nodes
    ]
    if not idxs:
        raise ValueError("all pollutant values are missing")
    return max(idxs)


def paqi_array(bp: AqiBreakpoints, targets: np.ndarray) -> np.ndarray:
    """Row-wise overall index for a (n, 4) target matrix with NaN gaps."""
    per = np.full(targets.shape, -np.inf)
    for j, p in enumerate(POLLUTANTS):
        col = targets[:, j]
        ok = np.isfinite(col)
        if ok.any():
            per[ok, j] = pollutant_aqi_array(bp, p, col[ok])
    out = per.max(axis=1)
    if np.any(~np.isfinite(out)):
        raise ValueError("some rows have no present pollutant")
    return out


def categorize(bp: AqiBreakpoints, index: float) -> str:
    """Exposure bucket; intervals are closed on the left."""
    return CATEGORIES[int(np.digitize(index, bp.thresholds, right=False))]


def categorize_array(bp: AqiBreakpoints, index: np.ndarray) -> np.ndarray:
    bins = np.digitize(index, bp.thresholds, right=False)
    return np.array([CATEGORIES[b] for b in bins], dtype=object)


# ---------------------------------------------------------------------------
# station split
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DatasetSplit:
    train_ids: tuple
    eval_ids: tuple
    seed: int


def split_stations(stations: Sequence[Station], seed: int) -> DatasetSplit:
    """Deterministic 80/20 split over stations, never leaving a side empty."""
    ids = sorted(s.id for s in stations)
    if len(ids) < 5:
        raise ValueError(f"need at least 5 stations to split, got {len(ids)}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(ids))
    n_train = int(round(0.8 * len(ids)))
    train = tuple(ids[i] for i in perm[:n_train])
    evals = tuple(ids[i] for i in perm[n_train:])
    return DatasetSplit(train, evals, seed)


# ---------------------------------------------------------------------------
# row tables
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DataRow:
    features: FeatureVector
    targets: dict
    station_id: str
    hour: int
    region: str
    category: str


@dataclass
class RowTable:
    """Column-wise storage of data rows; what training and evaluation eat."""

    feature_names: tuple
    features: np.ndarray       # (n, F)
    imputed: np.ndarray        # (n, F) bool
    targets: np.ndarray        # (n, 4), NaN = not measured
    station_ids: np.ndarray    # (n,) object
    hours: np.ndarray          # (n,) int64
    regions: np.ndarray        # (n,) object
    categories: np.ndarray     # (n,) object

    def __len__(self) -> int:
        return self.features.shape[0]

    def row(self, i: int) -> DataRow:
        targets = {
            p: (None if np.isnan(self.targets[i, j]) else float(self.targets[i, j]))
            for j, p in enumerate(POLLUTANTS)
        }
        return DataRow(
            features=FeatureVector(self.feature_names, self.features[i],
                                   self.imputed[i]),
            targets=targets,
            station_id=str(self.station_ids[i]),
            hour=int(self.hours[i]),
            region=str(self.regions[i]),
            category=str(self.categories[i]),
        )

    def subset(self, idx) -> "RowTable":
        idx = np.asarray(idx)
        return RowTable(
            self.feature_names, self.features[idx], self.imputed[idx],
            self.targets[idx], self.station_ids[idx], self.hours[idx],
            self.regions[idx], self.categories[idx],
        )

    @staticmethod
    def concat(tables: Sequence["RowTable"]) -> "RowTable":
        first = tables[0]
        for t in tables[1:]:
            if t.feature_names != first.feature_names:
                raise ValueError("cannot concatenate tables with different features")
        return RowTable(
            first.feature_names,
            np.concatenate([t.features for t in tables]),
            np.concatenate([t.imputed for t in tables]),
            np.concatenate([t.targets for t in tables]),
            np.concatenate([t.station_ids for t in tables]),
            np.concatenate([t.hours for t in tables]),
            np.concatenate([t.regions for t in tables]),
            np.concatenate([t.categories for t in tables]),
        )

    def to_csv(self, path) -> None:
        cols = list(self.feature_names) + [f"target_{p}" for p in POLLUTANTS]
        cols += ["station_id", "timestamp", "region", "category"]
        lines = [",".join(cols)]
        for i in range(len(self)):
            cells = [repr(float(v)) for v in self.features[i]]
            for j in range(4):
                v = self.targets[i, j]
                cells.append("" if np.isnan(v) else repr(float(v)))
            cells += [
                str(self.station_ids[i]),
                format_hour_utc(int(self.hours[i])),
                str(self.regions[i]),
                str(self.categories[i]),
            ]
            lines.append(",".join(cells))
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def from_csv(cls, path) -> "RowTable":
        with open(path, "r", encoding="utf-8") as f:
            lines = f.read().splitlines()
        header = lines[0].split(",")
        tail = ["station_id", "timestamp", "region", "category"]
        n_feat = len(header) - 4 - len(tail)
        feature_names = tuple(header[:n_feat])
        feats, targets, sids, hours, regions, cats = [], [], [], [], [], []
        for line in lines[1:]:
            if not line.strip():
                continue
            cells = line.split(",")
            feats.append([float(c) for c in cells[:n_feat]])
            targets.append(
                [float(c) if c else np.nan for c in cells[n_feat:n_feat + 4]]
            )
            sids.append(cells[n_feat + 4])
            hours.append(parse_hour_utc(cells[n_feat + 5]))
            regions.append(cells[n_feat + 6])
            cats.append(cells[n_feat + 7])
        features = np.asarray(feats, dtype=float).reshape(-1, n_feat)
        return cls(
            feature_names, features, np.zeros_like(features, dtype=bool),
            np.asarray(targets, dtype=float).reshape(-1, 4),
            np.asarray(sids, dtype=object), np.asarray(hours, dtype=np.int64),
            np.asarray(regions, dtype=object), np.asarray(cats, dtype=object),
        )


def build_rows(
    world: World,
    station_ids: Sequence[str],
    hours: Sequence[int],
    config: FeatureConfig,
    breakpoints: Optional[AqiBreakpoints] = None,
    computer: Optional[FeatureComputer] = None,
) -> RowTable:
    """One row per (station, hour) with at least one measured target.

    Features are computed with the row's own station excluded; they are
    left raw (NaN where missing) so imputation statistics can be taken from
    the training split alone. Categories come from the measured targets.
    """
    bp = breakpoints or AqiBreakpoints.default()
    comp = computer or FeatureComputer(world, config)
    sp = np.array([world.station_position(s) for s in station_ids], dtype=int)
    hp = np.array([world.hour_position(h) for h in hours], dtype=int)

    values, _ = comp.station_feature_tensor(sp, hp)     # (S, H, F)
    targets = np.stack(
        [world.measurements[p][np.ix_(sp, hp)] for p in POLLUTANTS], axis=-1
    )                                                    # (S, H, 4)

    S, H, F = values.shape
    keep = np.isfinite(targets).any(axis=2).ravel()
    flat_values = values.reshape(S * H, F)[keep]
    flat_targets = targets.reshape(S * H, 4)[keep]
    sid_grid = np.repeat(np.asarray(station_ids, dtype=object), H)[keep]
    hour_grid = np.tile(np.asarray(hours, dtype=np.int64), S)[keep]

    index = paqi_array(bp, flat_targets)
    cats = categorize_array(bp, index)
    return RowTable(
        feature_names=comp.names,
        features=flat_values,
        imputed=np.isnan(flat_values),
        targets=flat_targets,
        station_ids=sid_grid,
        hours=hour_grid,
        regions=np.full(keep.sum(), world.region.name, dtype=object),
        categories=cats,
    )


def impute_rows(table: RowTable, means: np.ndarray) -> RowTable:
    """Fill NaN features with the supplied per-feature means."""
    means = np.asarray(means, dtype=float)
    missing = np.isnan(table.features)
    filled = np.where(missing, means[None, :], table.features)
    return RowTable(
        table.feature_names, filled, missing, table.targets,
        table.station_ids, table.hours, table.regions, table.categories,
    )


def stratified_sample(table: RowTable, n_per_category: int, seed: int) -> RowTable:
    """Exactly n rows per exposure category, drawn with replacement."""
    if n_per_category < 1:
        raise ValueError("n_per_category must be at least 1")
    rng = np.random.default_rng(seed)
    picks = []
    for cat in CATEGORIES:
        pool = np.nonzero(table.categories == cat)[0]
        if pool.size == 0:
            raise ValueError(f"exposure category {cat!r} has no rows to sample")
        picks.append(pool[rng.integers(0, pool.size, n_per_category)])
    return table.subset(np.concatenate(picks))
