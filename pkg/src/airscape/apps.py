"""Applications on top of the prediction engine.

* raster rendering: concentrations and the health index predicted at every
  cell centre of a regular grid, exportable as CSV or grayscale PNG;
* exposure-aware pedestrian routing: a road graph whose edges carry both
  length and a predicted health-index weight, with Dijkstra runs for the
  shortest and for the least-exposed path.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .dataset import AqiBreakpoints, paqi_array
from .features import FeatureComputer, FeatureConfig
from .geo import BoundingBox, GeoPoint, distance_km_arrays
from .ingest import POLLUTANTS, RoadSegment, World
from .model import MLPModel, predict

#: floor for edge weights; a zero-pollution edge must still cost something
PAQI_WEIGHT_FLOOR = 1e-3


@dataclass
class GridMap:
    bbox: BoundingBox
    cell_size_m: float
    hour: int
    lats: np.ndarray                 # (nlat,) cell-centre latitudes, ascending
    lons: np.ndarray                 # (nlon,) cell-centre longitudes, ascending
    conc: dict                       # pollutant -> (nlat, nlon)
    paqi: np.ndarray                 # (nlat, nlon)


def render_grid(
    model: MLPModel,
    world: World,
    bbox: BoundingBox,
    cell_size_m: float,
    t: int,
    computer: Optional[FeatureComputer] = None,
    breakpoints: Optional[AqiBreakpoints] = None,
    chunk: int = 4096,
) -> GridMap:
    """Predict at every cell centre of a regular raster over the box.

    The computer must carry imputation means (a model cannot digest NaN
    features); cell counts are ceil(span / cell size) per axis.
    """
    wb = world.region.bbox
    if not (wb.contains(bbox.south_west) and wb.contains(bbox.north_east)):
        raise ValueError("requested box extends outside the region")
    comp = computer or FeatureComputer(world, FeatureConfig())
    bp = breakpoints or AqiBreakpoints.default()

    mid_lat = 0.5 * (bbox.min_lat + bbox.max_lat)
    span_lat_m = (bbox.max_lat - bbox.min_lat) * 110.574 * 1000.0
    span_lon_m = ((bbox.max_lon - bbox.min_lon)
                  * 111.320 * math.cos(math.radians(mid_lat)) * 1000.0)
    nlat = max(1, math.ceil(span_lat_m / cell_size_m))
    nlon = max(1, math.ceil(span_lon_m / cell_size_m))
    lats = bbox.min_lat + (np.arange(nlat) + 0.5) * (bbox.max_lat - bbox.min_lat) / nlat
    lons = bbox.min_lon + (np.arange(nlon) + 0.5) * (bbox.max_lon - bbox.min_lon) / nlon

    LAT, LON = np.meshgrid(lats, lons, indexing="ij")
    flat_lat, flat_lon = LAT.ravel(), LON.ravel()
    preds = np.empty((flat_lat.size, 4))
    for start in range(0, flat_lat.size, chunk):
        sl = slice(start, start + chunk)
        values, _ = comp.compute_matrix(flat_lat[sl], flat_lon[sl], t)
        if np.isnan(values).any():
            raise ValueError(
                "feature matrix contains gaps; build the computer with "
                "imputation means before rendering"
            )
        preds[sl] = predict(model, values)

    conc = {p: preds[:, k].reshape(nlat, nlon) for k, p in enumerate(POLLUTANTS)}
    index = paqi_array(bp, preds).reshape(nlat, nlon)
    return GridMap(bbox, cell_size_m, int(t), lats, lons, conc, index)


def grid_to_csv(grid: GridMap, path) -> None:
    lines = ["lat,lon,no2,o3,pm25,pm10,paqi"]
    for i, la in enumerate(grid.lats):
        for j, lo in enumerate(grid.lons):
            cells = [repr(float(la)), repr(float(lo))]
            cells += [repr(float(grid.conc[p][i, j])) for p in POLLUTANTS]
            cells.append(repr(float(grid.paqi[i, j])))
            lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def grid_to_png(grid: GridMap, field: str, path) -> None:
    """Grayscale raster of one pollutant (or "paqi"), north up."""
    from PIL import Image

    values = grid.paqi if field == "paqi" else grid.conc[field]
    lo, hi = float(np.min(values)), float(np.max(values))
    scale = 255.0 / (hi - lo) if hi > lo else 0.0
    img = ((values - lo) * scale).astype(np.uint8)
    Image.fromarray(np.flipud(img), mode="L").save(path, format="PNG")


# ---------------------------------------------------------------------------
# road graph and routing
# ---------------------------------------------------------------------------

QUANT = 1e-6  # endpoint snap in degrees


@dataclass(frozen=True)
class Edge:
    u: int
    v: int
    length_km: float
    functional_class: int
    segment_id: str
    mid_lat: float
    mid_lon: float


@dataclass
class RoadGraph:
    """Undirected graph with one edge per road segment.

    Nodes are polyline endpoints snapped to a 1e-6 degree lattice, so
    segments sharing an endpoint connect exactly.
    """

    node_lat: np.ndarray
    node_lon: np.ndarray
    edges: list
    paqi_weight: Optional[np.ndarray] = None

    def __post_init__(self):
        self._adj = [[] for _ in range(self.node_lat.size)]
        for idx, e in enumerate(self.edges):
            self._adj[e.u].append((idx, e.v))
            self._adj[e.v].append((idx, e.u))

    @property
    def n_nodes(self) -> int:
        return int(self.node_lat.size)

    def neighbors(self, node: int):
        return self._adj[node]

    def nearest_node(self, point: GeoPoint) -> int:
        d = distance_km_arrays(point.lat_deg, point.lon_deg,
                               self.node_lat, self.node_lon)
        return int(np.argmin(d))

    def with_weights(self, weights: np.ndarray) -> "RoadGraph":
        return RoadGraph(self.node_lat, self.node_lon, self.edges,
                         np.asarray(weights, dtype=float))


def build_graph(segments: Sequence[RoadSegment]) -> RoadGraph:
    nodes: dict[tuple, int] = {}
    lats: list[float] = []
    lons: list[float] = []

    def node_of(p: GeoPoint) -> int:
        key = (round(p.lat_deg / QUANT), round(p.lon_deg / QUANT))
        if key not in nodes:
            nodes[key] = len(lats)
            lats.append(p.lat_deg)
            lons.append(p.lon_deg)
        return nodes[key]

    edges = []
    for seg in segments:
        u = node_of(seg.polyline[0])
        v = node_of(seg.polyline[-1])
        mid = seg.midpoint()
        edges.append(Edge(u, v, seg.length_km, seg.functional_class, seg.id,
                          mid.lat_deg, mid.lon_deg))
    return RoadGraph(np.asarray(lats), np.asarray(lons), edges)


def annotate_paqi(
    graph: RoadGraph,
    model: MLPModel,
    world: World,
    t: int,
    computer: Optional[FeatureComputer] = None,
    breakpoints: Optional[AqiBreakpoints] = None,
    floor: float = PAQI_WEIGHT_FLOOR,
) -> RoadGraph:
    """Weight every edge with the health index predicted at its midpoint."""
    comp = computer or FeatureComputer(world, FeatureConfig())
    bp = breakpoints or AqiBreakpoints.default()
    mid_lat = np.array([e.mid_lat for e in graph.edges])
    mid_lon = np.array([e.mid_lon for e in graph.edges])
    values, _ = comp.compute_matrix(mid_lat, mid_lon, t)
    if np.isnan(values).any():
        raise ValueError("feature gaps while annotating; supply imputation means")
    index = paqi_array(bp, predict(model, values))
    return graph.with_weights(np.maximum(index, floor))


@dataclass(frozen=True)
class PathSummary:
    nodes: tuple
    length_km: float
    exposure: float          # sum of edge length * paqi weight


@dataclass(frozen=True)
class RoutePlan:
    shortest: PathSummary
    clean: PathSummary
    length_delta_pct: float     # how much longer the clean path is
    exposure_delta_pct: float   # how much less exposed the clean path is


def _dijkstra(graph: RoadGraph, cost: np.ndarray, origin: int, destination: int):
    n = graph.n_nodes
    dist = np.full(n, np.inf)
    prev_edge = np.full(n, -1, dtype=int)
    prev_node = np.full(n, -1, dtype=int)
    dist[origin] = 0.0
    heap = [(0.0, origin)]
    while heap:
        d, u = heapq.heappop(heap)
        if d > dist[u]:
            continue
        if u == destination:
            break
        for eidx, v in graph.neighbors(u):
            nd = d + cost[eidx]
            if nd < dist[v]:
                dist[v] = nd
                prev_edge[v] = eidx
                prev_node[v] = u
                heapq.heappush(heap, (nd, v))
    if not np.isfinite(dist[destination]):
        raise ValueError("origin and destination are not connected")
    path = [destination]
    edges = []
    node = destination
    while node != origin:
        edges.append(int(prev_edge[node]))
        node = int(prev_node[node])
        path.append(node)
    return tuple(reversed(path)), list(reversed(edges))


def _summarize(graph: RoadGraph, nodes, edge_idx) -> PathSummary:
    length = sum(graph.edges[i].length_km for i in edge_idx)
    exposure = sum(graph.edges[i].length_km * graph.paqi_weight[i]
                   for i in edge_idx)
    return PathSummary(nodes, length, exposure)


def route(graph: RoadGraph, origin: int, destination: int) -> RoutePlan:
    """Shortest path by length and cleanest path by length * health index."""
    if graph.paqi_weight is None:
        raise ValueError("graph lacks health-index weights; annotate it first")
    lengths = np.array([e.length_km for e in graph.edges])
    shortest = _summarize(graph, *_dijkstra(graph, lengths, origin, destination))
    clean = _summarize(
        graph, *_dijkstra(graph, lengths * graph.paqi_weight, origin, destination)
    )
    if shortest.length_km > 0:
        dlen = 100.0 * (clean.length_km - shortest.length_km) / shortest.length_km
    else:
        dlen = 0.0
    if shortest.exposure > 0:
        dexp = 100.0 * (clean.exposure - shortest.exposure) / shortest.exposure
    else:
        dexp = 0.0
    return RoutePlan(shortest, clean, dlen, dexp)


def route_to_geojson(plan: RoutePlan, graph: RoadGraph) -> dict:
    def line(summary: PathSummary):
        return [
            [float(graph.node_lon[n]), float(graph.node_lat[n])]
            for n in summary.nodes
        ]

    return {
        "type": "FeatureCollection",
        "features": [
            {
                "type": "Feature",
                "geometry": {"type": "LineString", "coordinates": line(plan.shortest)},
                "properties": {
                    "kind": "shortest",
                    "length_km": plan.shortest.length_km,
                    "exposure": plan.shortest.exposure,
                },
            },
            {
                "type": "Feature",
                "geometry": {"type": "LineString", "coordinates": line(plan.clean)},
                "properties": {
                    "kind": "clean",
                    "length_km": plan.clean.length_km,
                    "exposure": plan.clean.exposure,
                    "length_delta_pct": plan.length_delta_pct,
                    "exposure_delta_pct": plan.exposure_delta_pct,
                },
            },
        ],
    }


def save_route_geojson(plan: RoutePlan, graph: RoadGraph, path) -> None:
    Path(path).write_text(
        json.dumps(route_to_geojson(plan, graph), sort_keys=True) + "\n",
        encoding="utf-8",
    )
