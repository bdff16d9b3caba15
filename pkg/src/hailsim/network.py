"""Road network, node snapping, distance metrics and hourly all-pairs travel times."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

EARTH_RADIUS_KM = 6371.0
HOURS = 24
SPEED_MIN_KMH = 5.0
SPEED_MAX_KMH = 80.0
ZONES = ("center", "outer", "airport")


def haversine_km(p1, p2) -> float:
    """Great-circle distance in km between two ``(lat, lon)`` pairs in degrees."""
    lat1, lon1 = map(math.radians, p1)
    lat2, lon2 = map(math.radians, p2)
    a = (
        math.sin((lat2 - lat1) / 2) ** 2
        + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2) ** 2
    )
    return 2 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(a)))


def haversine_km_array(lat1, lon1, lat2, lon2) -> np.ndarray:
    """Vectorised haversine; arguments broadcast."""
    lat1, lon1, lat2, lon2 = (np.radians(np.asarray(a, dtype=float)) for a in (lat1, lon1, lat2, lon2))
    a = np.sin((lat2 - lat1) / 2) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2) ** 2
    return 2 * EARTH_RADIUS_KM * np.arcsin(np.minimum(1.0, np.sqrt(a)))


def project_equirectangular(lat, lon, lat0: float, lon0: float):
    """Planar km coordinates of ``(lat, lon)`` about the reference point ``(lat0, lon0)``."""
    lat = np.asarray(lat, dtype=float)
    lon = np.asarray(lon, dtype=float)
    x = EARTH_RADIUS_KM * np.radians(lon - lon0) * math.cos(math.radians(lat0))
    y = EARTH_RADIUS_KM * np.radians(lat - lat0)
    return x, y


def unproject_equirectangular(x, y, lat0: float, lon0: float):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    lat = lat0 + np.degrees(y / EARTH_RADIUS_KM)
    lon = lon0 + np.degrees(x / (EARTH_RADIUS_KM * math.cos(math.radians(lat0))))
    return lat, lon


@dataclass(frozen=True, eq=False)
class RoadNetwork:
    """Directed road graph with node coordinates and edge lengths.

    Planar ``x``/``y`` are the equirectangular projection of ``lat``/``lon``
    about the node centroid, so Manhattan distances come out in km. Build
    instances with :meth:`from_latlon`, which computes the projection.
    """

    lat: np.ndarray
    lon: np.ndarray
    x: np.ndarray
    y: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    length_km: np.ndarray
    zone: Optional[np.ndarray] = None

    def __post_init__(self):
        n = len(self.lat)
        if not (len(self.lon) == len(self.x) == len(self.y) == n):
            raise ValueError("node coordinate arrays differ in length")
        if not (len(self.src) == len(self.dst) == len(self.length_km)):
            raise ValueError("edge arrays differ in length")
        if len(self.src) and (self.src.min() < 0 or self.dst.min() < 0
                              or self.src.max() >= n or self.dst.max() >= n):
            raise ValueError("edge references a node id outside 0..n-1")
        if np.any(~(self.length_km > 0)):
            raise ValueError("edge lengths must be strictly positive")
        if self.zone is not None:
            if len(self.zone) != n:
                raise ValueError("zone array length differs from node count")
            bad = set(self.zone.tolist()) - set(ZONES) - {""}
            if bad:
                raise ValueError(f"unknown zone tags: {sorted(bad)}")
        for a in (self.lat, self.lon, self.x, self.y, self.src, self.dst, self.length_km):
            a.flags.writeable = False

    @classmethod
    def from_latlon(cls, lat, lon, src, dst, length_km, zone=None) -> "RoadNetwork":
        lat = np.asarray(lat, dtype=float)
        lon = np.asarray(lon, dtype=float)
        if len(lat) == 0:
            raise ValueError("network needs at least one node")
        x, y = project_equirectangular(lat, lon, float(lat.mean()), float(lon.mean()))
        return cls(
            lat=lat,
            lon=lon,
            x=x,
            y=y,
            src=np.asarray(src, dtype=np.int64),
            dst=np.asarray(dst, dtype=np.int64),
            length_km=np.asarray(length_km, dtype=float),
            zone=None if zone is None else np.asarray(zone, dtype=object),
        )

    @property
    def n_nodes(self) -> int:
        return len(self.lat)

    @property
    def n_edges(self) -> int:
        return len(self.src)

    def check_node(self, node) -> int:
        node = int(node)
        if not 0 <= node < self.n_nodes:
            raise IndexError(f"unknown node id {node}")
        return node

    def zone_of(self, node) -> str:
        if self.zone is None or not self.zone[node]:
            raise ValueError(f"node {node} has no zone tag")
        return self.zone[node]

    def shortest_lengths(self) -> np.ndarray:
        """All-pairs shortest network length (km)."""
        return floyd_warshall(self.n_nodes, self.src, self.dst, self.length_km)

    # -- CSV ---------------------------------------------------------------

    def to_csv(self, nodes_path, edges_path) -> None:
        with open(nodes_path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            has_zone = self.zone is not None
            w.writerow(["node_id", "lat", "lon"] + (["zone"] if has_zone else []))
            for i in range(self.n_nodes):
                row = [i, repr(float(self.lat[i])), repr(float(self.lon[i]))]
                if has_zone:
                    row.append(self.zone[i])
                w.writerow(row)
        with open(edges_path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["from", "to", "length_km"])
            for a, b, ell in zip(self.src, self.dst, self.length_km):
                w.writerow([int(a), int(b), repr(float(ell))])

    @classmethod
    def from_csv(cls, nodes_path, edges_path) -> "RoadNetwork":
        with open(nodes_path, newline="") as f:
            rows = list(csv.DictReader(f))
        if not rows:
            raise ValueError(f"{nodes_path}: no nodes")
        ids = [int(r["node_id"]) for r in rows]
        if sorted(ids) != list(range(len(ids))):
            raise ValueError(f"{nodes_path}: node ids must be dense 0..n-1")
        rows.sort(key=lambda r: int(r["node_id"]))
        zone = None
        if "zone" in rows[0]:
            zone = [r["zone"] or "" for r in rows]
        with open(edges_path, newline="") as f:
            erows = list(csv.DictReader(f))
        return cls.from_latlon(
            [float(r["lat"]) for r in rows],
            [float(r["lon"]) for r in rows],
            [int(r["from"]) for r in erows],
            [int(r["to"]) for r in erows],
            [float(r["length_km"]) for r in erows],
            zone=zone,
        )


def snap_to_node(lat: float, lon: float, network: RoadNetwork, radius: float = 0.2) -> Optional[int]:
    """Nearest node within ``radius`` km by haversine distance, else ``None``.

    Ties go to the lowest node id.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    d = haversine_km_array(lat, lon, network.lat, network.lon)
    i = int(np.argmin(d))
    return i if d[i] <= radius else None


def snap_points(lat, lon, network: RoadNetwork, radius: float = 0.2, chunk: int = 4096) -> np.ndarray:
    """Batch :func:`snap_to_node`; unmatched points map to -1."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    lat = np.asarray(lat, dtype=float)
    lon = np.asarray(lon, dtype=float)
    out = np.full(len(lat), -1, dtype=np.int64)
    for s in range(0, len(lat), chunk):
        d = haversine_km_array(lat[s:s + chunk, None], lon[s:s + chunk, None], network.lat[None, :], network.lon[None, :])
        idx = np.argmin(d, axis=1)
        ok = d[np.arange(len(idx)), idx] <= radius
        out[s:s + chunk] = np.where(ok, idx, -1)
    return out


def manhattan_km(a, b, network: RoadNetwork) -> float:
    """L1 distance between two nodes on the planar projection."""
    a = network.check_node(a)
    b = network.check_node(b)
    return float(abs(network.x[a] - network.x[b]) + abs(network.y[a] - network.y[b]))


def floyd_warshall(n: int, src, dst, weight, return_next: bool = False):
    """Dense Floyd-Warshall over a directed edge list.

    Parallel edges keep the cheapest weight. Unreachable pairs are ``inf``.
    With ``return_next`` a next-hop matrix (-1 where no path) is returned too.
    """
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    weight = np.asarray(weight, dtype=float)
    D = np.full((n, n), np.inf)
    np.minimum.at(D, (src, dst), weight)
    np.fill_diagonal(D, 0.0)
    if not return_next:
        for k in range(n):
            np.minimum(D, D[:, k, None] + D[None, k, :], out=D)
        return D
    nxt = np.where(np.isfinite(D), np.arange(n)[None, :], -1)
    for k in range(n):
        via = D[:, k, None] + D[None, k, :]
        better = via < D
        D[better] = via[better]
        nxt = np.where(better, nxt[:, k, None], nxt)
    return D, nxt


def edge_time_bounds(length_km, speed_bounds=(SPEED_MIN_KMH, SPEED_MAX_KMH)):
    """Per-edge (min, max) travel time in minutes implied by the speed bounds."""
    length_km = np.asarray(length_km, dtype=float)
    return 60.0 * length_km / speed_bounds[1], 60.0 * length_km / speed_bounds[0]


@dataclass(frozen=True, eq=False)
class TravelTimeTensor:
    """Hourly shortest travel times (minutes).

    ``times[h, i, j]`` is the shortest time from ``i`` to ``j`` departing in
    hour ``h``; ``edge_times[h, e]`` the per-edge time it was built from.
    """

    times: np.ndarray
    edge_times: np.ndarray

    def __post_init__(self):
        if self.times.ndim != 3 or self.times.shape[0] != HOURS or self.times.shape[1] != self.times.shape[2]:
            raise ValueError("times must have shape (24, n, n)")
        if self.edge_times.ndim != 2 or self.edge_times.shape[0] != HOURS:
            raise ValueError("edge_times must have shape (24, n_edges)")
        self.times.flags.writeable = False
        self.edge_times.flags.writeable = False

    @property
    def n_nodes(self) -> int:
        return self.times.shape[1]

    def save_npz(self, path) -> None:
        np.savez(path, times=self.times, edge_times=self.edge_times)

    @classmethod
    def load_npz(cls, path) -> "TravelTimeTensor":
        with np.load(path) as z:
            return cls(times=np.array(z["times"]), edge_times=np.array(z["edge_times"]))

    def to_csv(self, path) -> None:
        """Dump keyed by ``(hour, from, to)``; unreachable pairs as ``inf``."""
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["hour", "from", "to", "minutes"])
            n = self.n_nodes
            for h in range(HOURS):
                for i in range(n):
                    row = self.times[h, i]
                    for j in range(n):
                        w.writerow([h, i, j, repr(float(row[j]))])

    @classmethod
    def from_csv(cls, path, edge_times) -> "TravelTimeTensor":
        with open(path, newline="") as f:
            rows = list(csv.DictReader(f))
        n = int(round(math.sqrt(len(rows) / HOURS)))
        if n * n * HOURS != len(rows):
            raise ValueError(f"{path}: row count is not 24*n*n")
        times = np.empty((HOURS, n, n))
        for r in rows:
            times[int(r["hour"]), int(r["from"]), int(r["to"])] = float(r["minutes"])
        return cls(times=times, edge_times=np.asarray(edge_times, dtype=float))


def all_pairs_shortest_times(edge_times, network: RoadNetwork) -> TravelTimeTensor:
    """Floyd-Warshall for each hour over per-edge minutes.

    ``edge_times`` has shape ``(24, n_edges)``; a single ``(n_edges,)`` row is
    broadcast to every hour.
    """
    et = np.asarray(edge_times, dtype=float)
    if et.ndim == 1:
        et = np.broadcast_to(et, (HOURS, len(et)))
    if et.shape != (HOURS, network.n_edges):
        raise ValueError(f"edge_times must have shape (24, {network.n_edges}), got {et.shape}")
    if np.any(~np.isfinite(et)) or np.any(et <= 0):
        raise ValueError("edge times must be positive and finite")
    times = np.empty((HOURS, network.n_nodes, network.n_nodes))
    cache = {}
    for h in range(HOURS):
        key = et[h].tobytes()
        if key not in cache:
            cache[key] = floyd_warshall(network.n_nodes, network.src, network.dst, et[h])
        times[h] = cache[key]
    return TravelTimeTensor(times=times, edge_times=np.array(et))


def shortest_time(tensor: TravelTimeTensor, hour: int, origin: int, destination: int) -> float:
    n = tensor.n_nodes
    if not 0 <= hour < HOURS:
        raise IndexError(f"hour {hour} outside 0..23")
    if not (0 <= origin < n and 0 <= destination < n):
        raise IndexError(f"node pair ({origin}, {destination}) outside 0..{n - 1}")
    return float(tensor.times[hour, origin, destination])


def speed_to_edge_times(network: RoadNetwork, speeds_kmh) -> np.ndarray:
    """Edge minutes from per-hour (24,) or per-hour-per-edge (24, E) speeds."""
    v = np.asarray(speeds_kmh, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    return 60.0 * network.length_km[None, :] / v


def read_edge_times_csv(path, network: RoadNetwork) -> np.ndarray:
    """Read ``edge_id,hour,minutes`` rows into a (24, n_edges) array."""
    et = np.full((HOURS, network.n_edges), np.nan)
    with open(path, newline="") as f:
        for r in csv.DictReader(f):
            et[int(r["hour"]), int(r["edge_id"])] = float(r["minutes"])
    if np.isnan(et).any():
        raise ValueError(f"{path}: missing (edge, hour) entries")
    return et


def write_edge_times_csv(path, edge_times: np.ndarray) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["edge_id", "hour", "minutes"])
        for e in range(edge_times.shape[1]):
            for h in range(edge_times.shape[0]):
                w.writerow([e, h, repr(float(edge_times[h, e]))])


def grid_network(rows: int, cols: int, spacing_km: float = 0.5, lat0: float = 30.66, lon0: float = 104.06,
                 zone: Optional[Sequence[str]] = None) -> RoadNetwork:
    """Bidirectional rectangular grid centred on ``(lat0, lon0)``."""
    if rows * cols < 1:
        raise ValueError("grid needs at least one node")
    r, c = np.divmod(np.arange(rows * cols), cols)
    x = (c - (cols - 1) / 2) * spacing_km
    y = (r - (rows - 1) / 2) * spacing_km
    lat, lon = unproject_equirectangular(x, y, lat0, lon0)
    src, dst = [], []
    for i in range(rows * cols):
        ri, ci = divmod(i, cols)
        if ci + 1 < cols:
            src += [i, i + 1]
            dst += [i + 1, i]
        if ri + 1 < rows:
            src += [i, i + cols]
            dst += [i + cols, i]
    return RoadNetwork.from_latlon(lat, lon, src, dst, np.full(len(src), spacing_km), zone=zone)


def load_network(nodes_path, edges_path) -> RoadNetwork:
    for p in (nodes_path, edges_path):
        if not Path(p).exists():
            raise FileNotFoundError(p)
    return RoadNetwork.from_csv(nodes_path, edges_path)
