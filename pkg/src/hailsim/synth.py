"""Synthetic desk-scale instances: grid network, diurnal demand, fleet targets.

Presets
-------
uniform
    Origins and destinations uniform over nodes.
hotspot
    A share ``hotspot_weight`` of origins and destinations falls on a few
    hotspot nodes.
imbalanced_attraction
    Hotspots as above plus "sink" nodes that attract many drop-offs but
    generate few requests (high attraction, low demand). Sinks form a remote
    corner block or, with ``sink_layout="scattered"``, are spread over the
    grid. With ``sink_profile="peak"`` their extra attraction follows the
    peak-hour shape, like commuter destinations.
two_zone
    Centre/outer tagging with trips drawn per category
    (centre-centre, outer-outer, cross) using ``zone_shares``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .network import HOURS, RoadNetwork, all_pairs_shortest_times, grid_network, speed_to_edge_times, write_edge_times_csv
from .simulator import TripTable

PRESETS = ("uniform", "hotspot", "imbalanced_attraction", "two_zone")
BASE_DATE = "2015-04-01"


@dataclass(frozen=True)
class SynthSpec:
    rows: int = 10
    cols: int = 10
    spacing_km: float = 0.5
    n_trips: int = 3000
    fleet_size: int = 150
    preset: str = "uniform"
    hotspots: int = 4
    hotspot_weight: float = 0.5
    sink_block: int = 3
    sink_weight: float = 0.3
    sink_origin_weight: float = 0.02
    sink_layout: str = "block"
    sink_profile: str = "flat"
    center_halfwidth: float = 0.5
    zone_shares: tuple = (0.375, 0.25, 0.375)
    center_density: float = 1.0
    airport: bool = False
    peak_hours: tuple = (8, 18)
    peak_width: float = 1.5
    base_level: float = 0.35
    offpeak_speed: float = 38.0
    peak_speed: float = 28.0
    speed_noise: float = 0.1
    fleet_min_fraction: float = 0.5
    fleet_curve: Optional[tuple] = None
    lat0: float = 30.66
    lon0: float = 104.06

    def __post_init__(self):
        if self.rows * self.cols < 2:
            raise ValueError("instance needs at least 2 nodes")
        if self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}")
        if not 0 <= self.hotspot_weight <= 1:
            raise ValueError("hotspot_weight must lie in [0, 1]")
        if self.n_trips < 0 or self.fleet_size < 0:
            raise ValueError("n_trips and fleet_size must be non-negative")
        if self.sink_layout not in ("block", "scattered") or self.sink_profile not in ("flat", "peak"):
            raise ValueError("sink_layout must be block|scattered and sink_profile flat|peak")
        if self.preset == "two_zone" and abs(sum(self.zone_shares) - 1) > 1e-9:
            raise ValueError("zone_shares must sum to 1")


@dataclass
class SynthInstance:
    spec: SynthSpec
    network: RoadNetwork
    trips: TripTable
    active_targets: tuple
    edge_times: np.ndarray
    hotspot_nodes: np.ndarray
    sink_nodes: np.ndarray
    taxi_ids: np.ndarray = field(repr=False, default=None)

    def tensor(self):
        return all_pairs_shortest_times(self.edge_times, self.network)

    def write(self, directory) -> dict:
        """Write nodes/edges/trips/fleet/edge-time CSVs plus the spec JSON."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        paths = {
            "nodes": d / "nodes.csv",
            "edges": d / "edges.csv",
            "trips": d / "trips.csv",
            "fleet": d / "fleet.csv",
            "edge_times": d / "edge_times.csv",
            "spec": d / "spec.json",
        }
        self.network.to_csv(paths["nodes"], paths["edges"])
        write_trip_records(paths["trips"], self)
        with open(paths["fleet"], "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["hour", "active"])
            for h, n in enumerate(self.active_targets):
                w.writerow([h, n])
        write_edge_times_csv(paths["edge_times"], self.edge_times)
        with open(paths["spec"], "w") as f:
            json.dump(asdict(self.spec), f, indent=1, sort_keys=True)
            f.write("\n")
        return {k: str(v) for k, v in paths.items()}


def diurnal_weights(spec: SynthSpec) -> np.ndarray:
    h = np.arange(HOURS, dtype=float)
    w = np.full(HOURS, spec.base_level)
    for p in spec.peak_hours:
        dist = np.minimum(np.abs(h - p), HOURS - np.abs(h - p))
        w += np.exp(-0.5 * (dist / spec.peak_width) ** 2)
    return w / w.sum()


def hourly_speeds(spec: SynthSpec) -> np.ndarray:
    w = diurnal_weights(spec)
    span = w.max() - w.min()
    frac = (w - w.min()) / span if span > 0 else np.zeros(HOURS)
    return spec.offpeak_speed + (spec.peak_speed - spec.offpeak_speed) * frac


def active_targets(spec: SynthSpec) -> tuple:
    if spec.fleet_curve is not None:
        curve = np.asarray(spec.fleet_curve, dtype=float)
        if len(curve) != HOURS:
            raise ValueError("fleet_curve needs 24 values")
    else:
        w = diurnal_weights(spec)
        curve = spec.fleet_min_fraction + (1 - spec.fleet_min_fraction) * w / w.max()
    return tuple(int(round(spec.fleet_size * c)) for c in curve)


def _zones(spec: SynthSpec, x, y):
    half_x = max(np.abs(x).max(), 1e-12)
    half_y = max(np.abs(y).max(), 1e-12)
    inner = (np.abs(x) <= spec.center_halfwidth * half_x + 1e-9) & (np.abs(y) <= spec.center_halfwidth * half_y + 1e-9)
    zone = np.where(inner, "center", "outer").astype(object)
    if spec.airport:
        # south-west corner block
        r, c = np.divmod(np.arange(spec.rows * spec.cols), spec.cols)
        zone[(r < 2) & (c < 2)] = "airport"
    return zone


def generate_synthetic_instance(spec: SynthSpec = SynthSpec(), seed: int = 0) -> SynthInstance:
    """Deterministic synthetic day for ``(spec, seed)``."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5EED]))
    n = spec.rows * spec.cols
    base = grid_network(spec.rows, spec.cols, spec.spacing_km, spec.lat0, spec.lon0)
    zone = _zones(spec, base.x, base.y)
    network = RoadNetwork.from_latlon(base.lat, base.lon, base.src, base.dst, base.length_km, zone=zone)

    edge_factor = np.exp(rng.normal(0.0, spec.speed_noise, network.n_edges)) if spec.speed_noise > 0 else np.ones(network.n_edges)
    speeds = np.clip(hourly_speeds(spec)[:, None] * edge_factor[None, :], 5.0, 80.0)
    edge_times = speed_to_edge_times(network, speeds)

    center = np.flatnonzero(zone == "center")
    dist_center = np.hypot(network.x, network.y)
    hot = np.argsort(dist_center, kind="stable")[: min(spec.hotspots, n)] if spec.preset != "uniform" else np.array([], dtype=np.int64)
    sinks = np.array([], dtype=np.int64)
    o_w = np.ones(n)
    d_w = np.ones(n)
    if spec.preset in ("hotspot", "imbalanced_attraction") and len(hot):
        extra = spec.hotspot_weight / max(1e-12, 1 - spec.hotspot_weight) * n / len(hot)
        o_w[hot] += extra
        d_w[hot] += extra
    sink_extra = np.zeros(n)
    if spec.preset == "imbalanced_attraction":
        b = min(spec.sink_block, spec.rows, spec.cols)
        if spec.sink_layout == "block":
            r, c = np.divmod(np.arange(n), spec.cols)
            sinks = np.flatnonzero((r >= spec.rows - b) & (c >= spec.cols - b))
        else:
            pool = np.setdiff1d(np.arange(n), hot)
            sinks = np.sort(rng.choice(pool, size=min(b * b, len(pool)), replace=False))
        sink_extra[sinks] = spec.sink_weight / max(1e-12, 1 - spec.sink_weight) * d_w.sum() / len(sinks)
        o_w[sinks] *= spec.sink_origin_weight

    hours = rng.choice(HOURS, size=spec.n_trips, p=diurnal_weights(spec))
    seconds = hours * 3600 + rng.integers(0, 3600, size=spec.n_trips)
    if spec.preset == "two_zone":
        origin, dest = _two_zone_od(spec, rng, zone, network, center)
    else:
        origin = _draw_origins(rng, o_w, hot, spec.n_trips)
        if spec.sink_profile == "peak":
            w = diurnal_weights(spec)
            shape = (w - w.min()) / max(w.max() - w.min(), 1e-12)
            # same daily sink share as the flat profile, concentrated in peaks
            scale = shape / max(float(np.dot(shape, w)), 1e-12)
            hour_w = d_w[None, :] + scale[:, None] * sink_extra[None, :]
            cum = np.cumsum(hour_w, axis=1)
            cum /= cum[:, -1:]

            def draw_dest(hrs):
                u = rng.random(len(hrs))
                return np.minimum((cum[hrs] < u[:, None]).sum(axis=1), n - 1)
        else:
            p_flat = (d_w + sink_extra) / (d_w + sink_extra).sum()

            def draw_dest(hrs):
                return rng.choice(n, size=len(hrs), p=p_flat)

        dest = draw_dest(hours)
        for _ in range(100):
            loop = origin == dest
            if not loop.any():
                break
            dest[loop] = draw_dest(hours[loop])
    if spec.n_trips and (origin == dest).any():
        raise ValueError("could not draw loop-free trips for this spec")
    order = np.argsort(seconds, kind="stable")
    seconds, origin, dest = seconds[order], origin[order], dest[order]
    trips = TripTable.from_arrays(seconds / 60.0, origin, dest)
    taxi = rng.integers(0, max(spec.fleet_size, 1), size=spec.n_trips)
    return SynthInstance(spec, network, trips, active_targets(spec), edge_times, hot, sinks, taxi)


def _draw_origins(rng, o_w, hot, size):
    """Origins with the hotspot count fixed at its expected value, the rest drawn by weight."""
    n = len(o_w)
    if not len(hot):
        return rng.choice(n, size=size, p=o_w / o_w.sum())
    is_hot = np.zeros(n, dtype=bool)
    is_hot[hot] = True
    k = int(round(o_w[is_hot].sum() / o_w.sum() * size))
    cold = np.flatnonzero(~is_hot)
    out = np.empty(size, dtype=np.int64)
    pos = rng.permutation(size)
    out[pos[:k]] = rng.choice(hot, size=k, p=o_w[hot] / o_w[hot].sum())
    if size > k:
        out[pos[k:]] = rng.choice(cold, size=size - k, p=o_w[cold] / o_w[cold].sum())
    return out


def _two_zone_od(spec, rng, zone, network, center):
    outer = np.flatnonzero(zone != "center")
    if not len(center) or not len(outer):
        raise ValueError("two_zone preset needs both centre and outer nodes")
    cat = rng.choice(3, size=spec.n_trips, p=np.asarray(spec.zone_shares, dtype=float))
    c_w = np.ones(len(center))
    o_w = np.ones(len(outer))
    origin = np.empty(spec.n_trips, dtype=np.int64)
    dest = np.empty(spec.n_trips, dtype=np.int64)

    def pick(pool, w, size):
        return pool[rng.choice(len(pool), size=size, p=w / w.sum())]

    for k in range(3):
        idx = np.flatnonzero(cat == k)
        if k == 0:
            a, b = (center, c_w), (center, c_w)
        elif k == 1:
            a, b = (outer, o_w), (outer, o_w)
        else:
            flip = rng.random(len(idx)) < 0.5
            oa = np.where(flip, 0, 1)
            origin[idx] = np.where(oa == 0, pick(*((center, c_w)), len(idx)), pick(*((outer, o_w)), len(idx)))
            dest[idx] = np.where(oa == 0, pick(*((outer, o_w)), len(idx)), pick(*((center, c_w)), len(idx)))
            continue
        origin[idx] = pick(*a, len(idx))
        dest[idx] = pick(*b, len(idx))
        for _ in range(100):
            loop = idx[origin[idx] == dest[idx]]
            if not len(loop):
                break
            dest[loop] = pick(*b, len(loop))
    return origin, dest


def _stamp(seconds: float) -> str:
    s = int(round(seconds))
    day, s = divmod(s, 86400)
    h, rem = divmod(s, 3600)
    m, sec = divmod(rem, 60)
    date = BASE_DATE if day == 0 else f"2015-04-{1 + day:02d}"
    return f"{date} {h:02d}:{m:02d}:{sec:02d}"


def write_trip_records(path, inst: SynthInstance) -> None:
    """Trip records in the raw ingestion layout (lat/lon + timestamps).

    Drop-off times use the ground-truth shortest time at the request hour,
    rounded to whole seconds.
    """
    tensor = inst.tensor()
    net = inst.network
    tr = inst.trips
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["vehicle_id", "pickup_time", "dropoff_time", "pickup_lat", "pickup_lon",
                    "dropoff_lat", "dropoff_lon"])
        for u in range(len(tr)):
            o, d = int(tr.origin[u]), int(tr.destination[u])
            start = tr.request_time[u] * 60.0
            hour = int(tr.request_time[u] // 60) % HOURS
            end = start + max(1.0, round(tensor.times[hour, o, d] * 60.0))
            w.writerow([int(inst.taxi_ids[u]), _stamp(start), _stamp(end),
                        repr(float(net.lat[o])), repr(float(net.lon[o])),
                        repr(float(net.lat[d])), repr(float(net.lon[d]))])


def synthetic_gps(inst: SynthInstance, n_taxis: int = 20, seed: int = 0, interval_s: int = 30,
                  cruise_steps: int = 6, gap_probability: float = 0.02) -> list:
    """Cruising-taxi GPS points ``(vehicle_id, timestamp_s, lat, lon, status)``.

    Each taxi serves a random subset of the day's trips in time order; between
    trips it cruises a random walk of ``cruise_steps`` edges before heading to
    the next pickup. Occasional dropped fixes create gaps above 300 s so the
    gap filter has something to reject.
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x6B5]))
    net = inst.network
    tensor = inst.tensor()
    out_edges = [[] for _ in range(net.n_nodes)]
    for e, (a, b) in enumerate(zip(net.src, net.dst)):
        out_edges[a].append((int(b), e))
    tr = inst.trips
    owner = rng.integers(0, n_taxis, size=len(tr))
    points = []
    for taxi in range(n_taxis):
        mine = np.flatnonzero(owner == taxi)
        if not len(mine):
            continue
        t = float(tr.request_time[mine[0]] * 60.0) - 600.0
        node = int(rng.integers(net.n_nodes))
        for u in mine:
            o, d = int(tr.origin[u]), int(tr.destination[u])
            # cruise, then drive to the pickup
            path = [node]
            for _ in range(cruise_steps):
                nxt, _ = out_edges[path[-1]][rng.integers(len(out_edges[path[-1]]))]
                path.append(nxt)
            path += _route(tensor, net, out_edges, path[-1], o, t)[1:]
            t = _emit(points, taxi, path, t, tensor, net, "deadheading", interval_s, rng, gap_probability)
            t = max(t, float(tr.request_time[u] * 60.0))
            t = _emit(points, taxi, _route(tensor, net, out_edges, o, d, t), t, tensor, net, "occupied", interval_s, rng, 0.0)
            node = d
    points.sort(key=lambda p: (p[0], p[1]))
    return points


def _route(tensor, net, out_edges, a, b, t):
    hour = int(t // 3600) % HOURS
    D = tensor.times[hour]
    path = [a]
    while path[-1] != b:
        cur = path[-1]
        best = min(out_edges[cur], key=lambda ne: (tensor.edge_times[hour, ne[1]] + D[ne[0], b], ne[0]))
        path.append(best[0])
    return path


def _emit(points, taxi, path, t, tensor, net, status, interval_s, rng, gap_probability):
    hour = int(t // 3600) % HOURS
    lookup = {(int(a), int(b)): e for e, (a, b) in enumerate(zip(net.src, net.dst))}
    points.append((taxi, int(round(t)), float(net.lat[path[0]]), float(net.lon[path[0]]), status))
    for a, b in zip(path[:-1], path[1:]):
        dur = tensor.edge_times[hour, lookup[(a, b)]] * 60.0
        steps = max(1, int(dur // interval_s))
        for s in range(1, steps + 1):
            f = s / steps
            t_pt = t + f * dur
            if gap_probability and rng.random() < gap_probability:
                t += 400.0
                t_pt += 400.0
            lat = net.lat[a] + f * (net.lat[b] - net.lat[a])
            lon = net.lon[a] + f * (net.lon[b] - net.lon[a])
            points.append((taxi, int(round(t_pt)), float(lat), float(lon), status))
        t += dur
    return t
