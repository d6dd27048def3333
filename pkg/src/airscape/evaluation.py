"""Model evaluation against the nearest-station benchmark.

The benchmark predicts each pollutant with the value reported by the
closest training station that measures it at that hour. Comparisons are
paired: any (row, pollutant) the benchmark cannot answer is dropped from
both sides, so the two scores always cover identical samples.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .dataset import RowTable
from .geo import GeoPoint, distance_km, distance_km_arrays
from .ingest import POLLUTANTS, Station, World
from .model import MLPModel, predict


def improvement_pct(benchmark_msle: float, model_msle: float) -> float:
    """Relative change of the model against the benchmark, in percent."""
    return 100.0 * (model_msle - benchmark_msle) / benchmark_msle


def nearest_station_predict(
    stations: Sequence[Station],
    measurements,
    l: GeoPoint,
    pollutant: str,
) -> Optional[float]:
    """Value of the closest station with a present measurement, or None.

    Distance ties break on the smaller station id so the benchmark is
    deterministic under any input ordering.
    """
    by_id = {m.station_id: m for m in measurements}
    best = None
    for s in stations:
        m = by_id.get(s.id)
        v = None if m is None else m.values.get(pollutant)
        if v is None:
            continue
        key = (distance_km(l, s.location), s.id)
        if best is None or key < best[0]:
            best = (key, v)
    return None if best is None else best[1]


def benchmark_predictions(world: World, train_ids: Sequence[str],
                          table: RowTable) -> np.ndarray:
    """Nearest-training-station predictions for every row, (n, 4) with NaN."""
    tr = sorted(train_ids)  # id order makes argmin ties deterministic
    tr_pos = np.array([world.station_position(s) for s in tr], dtype=int)
    row_pos = np.array([world.station_position(s) for s in table.station_ids],
                       dtype=int)
    hp = np.array([world.hour_position(h) for h in table.hours], dtype=int)

    dist = distance_km_arrays(
        world.station_lat[:, None], world.station_lon[:, None],
        world.station_lat[tr_pos][None, :], world.station_lon[tr_pos][None, :],
    )
    out = np.full((len(table), 4), np.nan)
    for k, p in enumerate(POLLUTANTS):
        m = world.measurements[p][tr_pos][:, hp]          # (T, n)
        present = np.isfinite(m)
        d = np.where(present.T, dist[row_pos], np.inf)    # (n, T)
        pick = np.argmin(d, axis=1)                       # first min = smallest id
        vals = m[pick, np.arange(len(table))]
        any_candidate = present.any(axis=0)
        out[:, k] = np.where(any_candidate, vals, np.nan)
    return out


def _masked_msle_by_pollutant(pred: np.ndarray, targets: np.ndarray,
                              pair_mask: np.ndarray):
    """(overall, per-pollutant) MSLE over the entries set in pair_mask."""
    err = np.zeros_like(pred)
    ok = pair_mask & np.isfinite(targets)
    err[ok] = np.log1p(np.maximum(pred[ok], 0.0)) - np.log1p(targets[ok])
    sq = err * err
    per = []
    for k in range(4):
        n = int(ok[:, k].sum())
        per.append(float(sq[ok[:, k], k].sum() / n) if n else float("nan"))
    total = int(ok.sum())
    overall = float(sq[ok].sum() / total) if total else float("nan")
    return overall, per


@dataclass(frozen=True)
class ScoreLine:
    label: str
    benchmark_msle: float
    model_msle: float
    n_pairs: int

    @property
    def improvement(self) -> float:
        return improvement_pct(self.benchmark_msle, self.model_msle)


@dataclass(frozen=True)
class EvalReport:
    region: str
    overall: ScoreLine
    per_pollutant: tuple
    fingerprint: str

    def to_text(self) -> str:
        lines = [
            f"region: {self.region}   config: {self.fingerprint}",
            f"{'':10s} {'Benchmark':>10s} {'Prediction model':>17s} {'Improvement (%)':>16s} {'pairs':>8s}",
        ]
        for s in (self.overall, *self.per_pollutant):
            lines.append(
                f"{s.label:10s} {s.benchmark_msle:10.3f} {s.model_msle:17.3f} "
                f"{s.improvement:16.1f} {s.n_pairs:8d}"
            )
        return "\n".join(lines) + "\n"

    def to_csv(self, path) -> None:
        lines = ["label,benchmark_msle,model_msle,improvement_pct,n_pairs"]
        for s in (self.overall, *self.per_pollutant):
            lines.append(
                f"{s.label},{s.benchmark_msle!r},{s.model_msle!r},"
                f"{round(s.improvement, 1)!r},{s.n_pairs}"
            )
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


Predictor = Union[MLPModel, Callable[[np.ndarray], np.ndarray]]


def _predictions(predictor: Predictor, table: RowTable) -> np.ndarray:
    if callable(predictor) and not isinstance(predictor, MLPModel):
        return np.asarray(predictor(table))
    return predict(predictor, table.features)


def evaluate(predictor: Predictor, world: World, train_ids: Sequence[str],
             table: RowTable, fingerprint: str = "") -> EvalReport:
    """Paired benchmark-vs-model MSLE, overall and per pollutant."""
    if len(table) == 0:
        raise ValueError("evaluation needs at least one row")
    pred = _predictions(predictor, table)
    bench = benchmark_predictions(world, train_ids, table)
    pair = np.isfinite(bench) & np.isfinite(table.targets)
    model_all, model_per = _masked_msle_by_pollutant(pred, table.targets, pair)
    bench_all, bench_per = _masked_msle_by_pollutant(bench, table.targets, pair)
    per = tuple(
        ScoreLine(p.upper(), bench_per[k], model_per[k], int(pair[:, k].sum()))
        for k, p in enumerate(POLLUTANTS)
    )
    overall = ScoreLine("all", bench_all, model_all, int(pair.sum()))
    return EvalReport(world.region.name, overall, per, fingerprint)


# ---------------------------------------------------------------------------
# transfer strategy comparison
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TransferComparison:
    global_msle: float
    regional_msle: float
    transfer_msle: float
    selected: str

    def as_tuple(self):
        return (self.global_msle, self.regional_msle, self.transfer_msle)


def select_strategy(global_msle: float, regional_msle: float,
                    transfer_msle: float) -> str:
    """Lowest score wins; exact ties resolve toward the transfer model."""
    if transfer_msle <= min(global_msle, regional_msle):
        return "transfer"
    if regional_msle <= global_msle:
        return "regional"
    return "global"


def compare_transfer(global_model: Predictor, regional_model: Predictor,
                     transfer_model: Predictor, table: RowTable) -> TransferComparison:
    """Score the three strategies on identical rows and pick the winner."""
    mask = np.isfinite(table.targets)
    scores = []
    for predictor in (global_model, regional_model, transfer_model):
        pred = _predictions(predictor, table)
        overall, _ = _masked_msle_by_pollutant(pred, table.targets, mask)
        scores.append(overall)
    return TransferComparison(*scores, selected=select_strategy(*scores))


# ---------------------------------------------------------------------------
# partial dependence
# ---------------------------------------------------------------------------

def partial_dependence(
    model: MLPModel,
    table: RowTable,
    feature_name: str,
    grid=None,
    n_grid: int = 20,
    sample_size: int = 2000,
    seed: int = 0,
):
    """Average prediction as one feature sweeps its observed range.

    Returns (grid, means) with means of shape (len(grid), 4). The sweep
    runs over a seeded subsample of rows for tractability; the default
    grid is the feature's 20 evenly spaced quantiles.
    """
    if feature_name not in model.feature_names:
        raise ValueError(f"unknown feature {feature_name!r}")
    j = model.feature_names.index(feature_name)
    rng = np.random.default_rng(seed)
    n = len(table)
    idx = rng.choice(n, min(sample_size, n), replace=False)
    X = table.features[idx].copy()
    if grid is None:
        grid = np.quantile(table.features[:, j], np.linspace(0.0, 1.0, n_grid))
    grid = np.asarray(grid, dtype=float)
    means = np.empty((grid.size, 4))
    for k, v in enumerate(grid):
        X[:, j] = v
        means[k] = predict(model, X).mean(axis=0)
    return grid, means


def pdp_to_csv(grid: np.ndarray, means: np.ndarray, feature_name: str, path) -> None:
    lines = [f"{feature_name}," + ",".join(f"mean_{p}" for p in POLLUTANTS)]
    for v, row in zip(grid, means):
        lines.append(",".join([repr(float(v))] + [repr(float(x)) for x in row]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
