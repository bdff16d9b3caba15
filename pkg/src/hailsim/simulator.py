"""Rolling-period ride-hailing simulation.

Each period collects newly requested trips together with backlogged ones,
cancels trips that queued too long, batch-matches the rest against vacant
vehicles, and advances vehicles through pickup and drop-off. Active fleet
size is reset at every hour boundary.
"""

from __future__ import annotations

import heapq
import io
import math
import zlib
from bisect import insort
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .kpi import METRICS, KpiReport, ServedRecord, build_report
from .matcher import FeasiblePairSet, build_feasible_pairs, solve_assignment
from .network import HOURS, RoadNetwork, TravelTimeTensor

RESTING, VACANT, PICKING_UP, CARRYING = 0, 1, 2, 3
VEHICLE_STATES = ("resting", "vacant", "picking-up", "carrying")

PENDING, IN_QUEUE, WAITING, IN_TRANSIT, SERVED, CANCELLED = -1, 0, 1, 2, 3, 4
TRIP_STATES = {PENDING: "pending", IN_QUEUE: "in-queue", WAITING: "waiting-pickup",
               IN_TRANSIT: "in-transit", SERVED: "served", CANCELLED: "cancelled"}

_PICKUP, _DROPOFF = 0, 1


def derive_seed(master: int, stage: str, index: int = 0) -> np.random.SeedSequence:
    """Stable child seed for ``(master seed, stage name, index)``."""
    return np.random.SeedSequence([int(master), zlib.crc32(stage.encode()), int(index)])


@dataclass(frozen=True)
class SimConfig:
    """Platform parameters for one simulated day.

    ``active_targets`` lists the active fleet wanted at the start of each of
    the 24 hours; ``fleet_size`` defaults to its maximum. ``fleet_factor``
    scales both, rounding to the nearest integer.
    """

    active_targets: tuple
    t_max_pu: float = 16.0
    t_max_queue: float = 20.0
    period: float = 1.0
    fleet_size: Optional[int] = None
    fleet_factor: float = 1.0
    horizon: float = 1440.0
    max_overtime: float = 2880.0
    record_events: bool = True

    def __post_init__(self):
        object.__setattr__(self, "active_targets", tuple(int(t) for t in self.active_targets))
        if len(self.active_targets) != HOURS:
            raise ValueError("active_targets needs one value per hour (24)")
        if any(t < 0 for t in self.active_targets):
            raise ValueError("active targets must be non-negative")
        per_hour = 60.0 / self.period
        if self.period <= 0 or abs(per_hour - round(per_hour)) > 1e-9:
            raise ValueError("period must divide 60 minutes")
        if not self.t_max_pu > 0 or not self.t_max_queue > 0:
            raise ValueError("t_max_pu and t_max_queue must be positive")
        if not self.fleet_factor > 0:
            raise ValueError("fleet_factor must be positive")
        if self.fleet_size is not None and self.fleet_size < 0:
            raise ValueError("fleet_size must be non-negative")

    @property
    def periods_per_hour(self) -> int:
        return int(round(60.0 / self.period))

    @property
    def fleet(self) -> int:
        base = self.fleet_size if self.fleet_size is not None else max(self.active_targets)
        return int(round(self.fleet_factor * base))

    @property
    def targets(self) -> list:
        return [min(int(round(self.fleet_factor * t)), self.fleet) for t in self.active_targets]


@dataclass(frozen=True, eq=False)
class TripTable:
    """One day of trip requests, sorted by request time (stable in input order)."""

    request_time: np.ndarray
    origin: np.ndarray
    destination: np.ndarray
    trip_id: np.ndarray

    @classmethod
    def from_arrays(cls, request_time, origin, destination, trip_id=None) -> "TripTable":
        t = np.asarray(request_time, dtype=float)
        o = np.asarray(origin, dtype=np.int64)
        d = np.asarray(destination, dtype=np.int64)
        ids = np.arange(len(t)) if trip_id is None else np.asarray(trip_id, dtype=np.int64)
        if not (len(t) == len(o) == len(d) == len(ids)):
            raise ValueError("trip arrays differ in length")
        if len(np.unique(ids)) != len(ids):
            raise ValueError("trip ids must be unique")
        order = np.argsort(t, kind="stable")
        return cls(t[order], o[order], d[order], ids[order])

    def __len__(self):
        return len(self.request_time)

    def subset(self, mask_or_index) -> "TripTable":
        idx = np.asarray(mask_or_index)
        return TripTable(self.request_time[idx], self.origin[idx], self.destination[idx], self.trip_id[idx])

    @property
    def request_hour(self) -> np.ndarray:
        return (self.request_time // 60).astype(np.int64) % HOURS


@dataclass
class Trip:
    """Final state of one trip after a simulated day."""

    id: int
    state: str
    request_time: float
    origin: int
    destination: int
    queue_delay: Optional[float] = None
    pickup_delay: Optional[float] = None
    vehicle: Optional[int] = None
    dropoff_time: Optional[float] = None


@dataclass
class Vehicle:
    """Final state of one vehicle."""

    id: int
    state: str
    node: int
    busy_until: Optional[float] = None
    trip: Optional[int] = None


class EventLog:
    """Transitions ordered by ``(time, sequence number)``.

    Each record is ``(time_min, seq, entity_kind, entity_id, transition, detail)``
    with ``detail`` a tuple of ``(key, value)`` pairs.
    """

    def __init__(self, records=()):
        self.records = list(records)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def sorted(self) -> "EventLog":
        return EventLog(sorted(self.records, key=lambda r: (r[0], r[1])))

    def to_text(self) -> str:
        buf = io.StringIO()
        buf.write("time_min,entity_kind,entity_id,transition,detail\n")
        for t, _, kind, eid, tr, detail in self.records:
            d = ";".join(f"{k}={_fmt(v)}" for k, v in detail)
            buf.write(f"{_fmt(t)},{kind},{eid},{tr},{d}\n")
        return buf.getvalue()

    def write(self, path) -> None:
        with open(path, "w", newline="") as f:
            f.write(self.to_text())

    @classmethod
    def from_text(cls, text: str) -> "EventLog":
        lines = text.splitlines()
        records = []
        for seq, line in enumerate(lines[1:]):
            t, kind, eid, tr, d = line.split(",", 4)
            detail = tuple((k, _parse(v)) for k, v in (kv.split("=", 1) for kv in d.split(";") if kv))
            records.append((float(t), seq, kind, int(eid), tr, detail))
        return cls(records)

    def served_records(self) -> list:
        out = []
        for _, _, kind, eid, tr, detail in self.records:
            if kind == "trip" and tr == "served":
                d = dict(detail)
                out.append(ServedRecord(eid, d["queue"], d["pickup"], d["md"], d["td"], d["hour"], d.get("zone", "")))
        return out

    def count(self, kind: str, transition: str) -> int:
        return sum(1 for r in self.records if r[2] == kind and r[4] == transition)


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(v: str):
    try:
        return int(v)
    except ValueError:
        pass
    try:
        return float(v)
    except ValueError:
        return v


def init_vehicle_positions(fleet_size: int, trip_origins, rng) -> np.ndarray:
    """Place each vehicle at the origin of a uniformly drawn historical trip."""
    trip_origins = np.asarray(trip_origins, dtype=np.int64)
    if len(trip_origins) == 0:
        raise ValueError("cannot place vehicles without historical trips")
    rng = np.random.default_rng(rng)
    return trip_origins[rng.integers(0, len(trip_origins), size=fleet_size)]


def apply_hourly_fleet_transition(states: np.ndarray, target: int, rng, retiring: Optional[np.ndarray] = None) -> list:
    """Move the active fleet (vacant + picking-up + carrying) towards ``target``.

    Mutates ``states`` in place and returns ``(vehicle, old_state, new_state)``
    tuples. Growth draws resting vehicles at random. Shrinking removes vacant,
    then picking-up, then carrying vehicles, at random within each class.
    Carrying vehicles are not stopped mid-ride: they are flagged in
    ``retiring`` and keep their state until drop-off, but no longer count as
    active.
    """
    if target < 0:
        raise ValueError("target must be non-negative")
    rng = np.random.default_rng(rng)
    if retiring is None:
        retiring = np.zeros(len(states), dtype=bool)
    active = int(np.count_nonzero(states != RESTING)) - int(np.count_nonzero(retiring))
    changes = []
    if active < target:
        resting = np.flatnonzero(states == RESTING)
        k = min(target - active, len(resting))
        for v in np.sort(rng.choice(resting, size=k, replace=False)) if k else ():
            states[v] = VACANT
            changes.append((int(v), RESTING, VACANT))
    elif active > target:
        excess = active - target
        for cls in (VACANT, PICKING_UP, CARRYING):
            if excess == 0:
                break
            pool = np.flatnonzero((states == cls) & ~retiring)
            k = min(excess, len(pool))
            if not k:
                continue
            for v in np.sort(rng.choice(pool, size=k, replace=False)):
                if cls == CARRYING:
                    retiring[v] = True
                    changes.append((int(v), CARRYING, CARRYING))
                else:
                    states[v] = RESTING
                    changes.append((int(v), cls, RESTING))
            excess -= k
    return changes


@dataclass
class SimResult:
    report: KpiReport
    events: EventLog
    served: list
    state_counts: np.ndarray
    trip_state: np.ndarray
    queue_delay: np.ndarray
    pickup_delay: np.ndarray
    trip_vehicle: np.ndarray
    dropoff_time: np.ndarray
    vehicle_state: np.ndarray
    vehicle_node: np.ndarray
    trips: TripTable
    fleet: int
    seed: object = None

    def trip_views(self) -> list:
        out = []
        for u in range(len(self.trips)):
            served = self.trip_vehicle[u] >= 0
            out.append(Trip(
                id=int(self.trips.trip_id[u]),
                state=TRIP_STATES[int(self.trip_state[u])],
                request_time=float(self.trips.request_time[u]),
                origin=int(self.trips.origin[u]),
                destination=int(self.trips.destination[u]),
                queue_delay=float(self.queue_delay[u]) if served else None,
                pickup_delay=float(self.pickup_delay[u]) if served else None,
                vehicle=int(self.trip_vehicle[u]) if served else None,
                dropoff_time=float(self.dropoff_time[u]) if np.isfinite(self.dropoff_time[u]) else None,
            ))
        return out

    def vehicle_views(self) -> list:
        return [Vehicle(id=v, state=VEHICLE_STATES[int(s)], node=int(n))
                for v, (s, n) in enumerate(zip(self.vehicle_state, self.vehicle_node))]


class DaySimulation:
    """Mutable state of one simulated day; drive it with :meth:`step_period`."""

    def __init__(self, trips: TripTable, tensor: TravelTimeTensor, network: RoadNetwork, cfg: SimConfig, seed=0):
        n = network.n_nodes
        if len(trips) and (trips.origin.min() < 0 or trips.destination.min() < 0
                           or trips.origin.max() >= n or trips.destination.max() >= n):
            raise ValueError("trip references a node outside the network")
        if tensor.n_nodes != n:
            raise ValueError("tensor and network node counts differ")
        self.trips = trips
        self.tensor = tensor
        self.times = tensor.times
        self.network = network
        self.cfg = cfg
        self.seed = seed
        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        place_ss, move_ss = ss.spawn(2)
        self.rng = np.random.default_rng(move_ss)
        self.fleet = cfg.fleet
        self.targets = cfg.targets
        m = len(trips)
        self.t_req = trips.request_time
        self.origin = trips.origin
        self.dest = trips.destination
        self.req_hour = trips.request_hour
        if network.zone is not None:
            self.origin_zone = [("outer" if z == "" else z) for z in network.zone[trips.origin]]
        else:
            self.origin_zone = None
        self.trip_state = np.full(m, PENDING, dtype=np.int8)
        self.k_req = np.zeros(m, dtype=np.int64)
        self.queue_delay = np.full(m, np.nan)
        self.pickup_delay = np.full(m, np.nan)
        self.trip_vehicle = np.full(m, -1, dtype=np.int64)
        self.dropoff_time = np.full(m, np.inf)
        self.md = np.zeros(m)

        if self.fleet and m:
            self.vnode = init_vehicle_positions(self.fleet, trips.origin, np.random.default_rng(place_ss))
        else:
            self.vnode = np.zeros(self.fleet, dtype=np.int64)
        self.initial_node = self.vnode.copy()
        self.vstate = np.full(self.fleet, RESTING, dtype=np.int8)
        self.retiring = np.zeros(self.fleet, dtype=bool)
        self.vtrip = np.full(self.fleet, -1, dtype=np.int64)
        self.vtoken = np.zeros(self.fleet, dtype=np.int64)
        self.busy_until = np.full(self.fleet, np.nan)

        self.k = 0
        self.next_trip = 0
        self.queue: list = []
        self.heap: list = []
        self.seq = 0
        self.events: list = []
        self.served: list = []
        self.state_counts: list = []
        self.x = network.x
        self.y = network.y

    # -- logging -----------------------------------------------------------

    def _log(self, t, kind, eid, transition, *detail):
        if self.cfg.record_events:
            self.events.append((t, self.seq, kind, eid, transition, detail))
        self.seq += 1

    # -- transitions -------------------------------------------------------

    def _hour_transition(self, hour_index: int, now: float):
        target = self.targets[hour_index] if hour_index < HOURS else self.targets[-1]
        if hour_index >= HOURS and target == 0 and self.outstanding():
            target = min(1, self.fleet)
        for v, old, new in apply_hourly_fleet_transition(self.vstate, target, self.rng, self.retiring):
            if old == CARRYING:
                self._log(now, "vehicle", v, "retire-after-dropoff")
                continue
            self._log(now, "vehicle", v, "activate" if new == VACANT else "deactivate", ("from", VEHICLE_STATES[old]))
            if old == PICKING_UP:
                u = int(self.vtrip[v])
                self.vtrip[v] = -1
                self.vtoken[v] += 1
                self.busy_until[v] = np.nan
                self.trip_state[u] = IN_QUEUE
                self.trip_vehicle[u] = -1
                insort(self.queue, u)
                self._log(now, "trip", int(self.trips.trip_id[u]), "requeue", ("vehicle", v))

    def outstanding(self) -> bool:
        return bool(self.queue) or bool(self.heap) or self.next_trip < len(self.trips)

    def step_period(self) -> None:
        """Advance one matching period."""
        cfg = self.cfg
        p = cfg.period
        k = self.k
        t0 = k * p
        now = (k + 1) * p
        if k % cfg.periods_per_hour == 0:
            self._hour_transition(k // cfg.periods_per_hour, t0)

        # new requests
        m = len(self.trips)
        while self.next_trip < m and self.t_req[self.next_trip] < now:
            u = self.next_trip
            self.trip_state[u] = IN_QUEUE
            self.k_req[u] = k
            self.queue.append(u)
            self._log(float(self.t_req[u]), "trip", int(self.trips.trip_id[u]), "request")
            self.next_trip += 1

        # cancellations
        if self.queue:
            keep = []
            for u in self.queue:
                if (k - self.k_req[u]) * p > cfg.t_max_queue:
                    self.trip_state[u] = CANCELLED
                    self._log(now, "trip", int(self.trips.trip_id[u]), "cancel", ("queue", (k - self.k_req[u]) * p))
                else:
                    keep.append(u)
            self.queue = keep

        # batch matching
        if self.queue:
            vacant = np.flatnonzero(self.vstate == VACANT)
            if len(vacant):
                self._match(vacant, k, t0, now)

        # pickups and drop-offs due by the end of the period
        heap = self.heap
        while heap and heap[0][0] <= now:
            t, _, kind, v, token = heapq.heappop(heap)
            if token != self.vtoken[v]:
                continue
            if kind == _PICKUP:
                self._pickup(v, t)
            else:
                self._dropoff(v, t)

        counts = np.bincount(self.vstate, minlength=4)
        self.state_counts.append(counts)
        self.k += 1

    def _match(self, vacant, k, t0, now):
        cfg = self.cfg
        hour = int(t0 // 60) % HOURS
        q = np.asarray(self.queue, dtype=np.int64)
        pairs = build_feasible_pairs(
            q, self.origin[q], (k - self.k_req[q]) * cfg.period,
            vacant, self.vnode[vacant], self.tensor, hour, cfg.t_max_pu, cfg.t_max_queue,
        )
        if not np.isfinite(pairs.cost).any():
            return
        assignment = solve_assignment(pairs)
        matched = set()
        for ti, vi in assignment.pairs:
            u = int(pairs.trips[ti])
            v = int(pairs.vehicles[vi])
            delay = float(pairs.cost[ti, vi])
            node = int(self.vnode[v])
            o = int(self.origin[u])
            self.queue_delay[u] = (k - self.k_req[u]) * cfg.period
            self.pickup_delay[u] = delay
            self.md[u] = abs(self.x[node] - self.x[o]) + abs(self.y[node] - self.y[o])
            self.trip_state[u] = WAITING
            self.trip_vehicle[u] = v
            self.vstate[v] = PICKING_UP
            self.vtrip[v] = u
            self.busy_until[v] = now + delay
            tid = int(self.trips.trip_id[u])
            self._log(now, "trip", tid, "match", ("vehicle", v), ("queue", float(self.queue_delay[u])), ("pickup", delay))
            self._log(now, "vehicle", v, "dispatch", ("trip", tid), ("from_node", node))
            self.seq += 1
            heapq.heappush(self.heap, (now + delay, self.seq, _PICKUP, v, int(self.vtoken[v])))
            matched.add(u)
        if matched:
            self.queue = [u for u in self.queue if u not in matched]

    def _pickup(self, v, t):
        u = int(self.vtrip[v])
        hour = int(t // 60) % HOURS
        ride = float(self.times[hour, self.origin[u], self.dest[u]])
        self.vstate[v] = CARRYING
        self.trip_state[u] = IN_TRANSIT
        self.vnode[v] = self.origin[u]
        self.busy_until[v] = t + ride
        tid = int(self.trips.trip_id[u])
        self._log(t, "trip", tid, "pickup", ("vehicle", v))
        self._log(t, "vehicle", v, "pickup", ("trip", tid), ("node", int(self.origin[u])))
        self.seq += 1
        heapq.heappush(self.heap, (t + ride, self.seq, _DROPOFF, v, int(self.vtoken[v])))

    def _dropoff(self, v, t):
        u = int(self.vtrip[v])
        d = int(self.dest[u])
        self.vnode[v] = d
        self.vtrip[v] = -1
        self.busy_until[v] = np.nan
        self.trip_state[u] = SERVED
        self.dropoff_time[u] = t
        tid = int(self.trips.trip_id[u])
        zone = self.origin_zone[u] if self.origin_zone is not None else ""
        rec = ServedRecord(tid, float(self.queue_delay[u]), float(self.pickup_delay[u]), float(self.md[u]),
                           float(self.pickup_delay[u]), int(self.req_hour[u]), zone)
        self.served.append(rec)
        self._log(t, "trip", tid, "served", ("vehicle", v), ("queue", rec.queue), ("pickup", rec.pickup),
                  ("md", rec.md), ("td", rec.td), ("hour", rec.hour), ("zone", zone))
        if self.retiring[v]:
            self.retiring[v] = False
            self.vstate[v] = RESTING
            self._log(t, "vehicle", v, "dropoff", ("trip", tid), ("node", d), ("to", "resting"))
        else:
            self.vstate[v] = VACANT
            self._log(t, "vehicle", v, "dropoff", ("trip", tid), ("node", d), ("to", "vacant"))

    def run(self) -> SimResult:
        cfg = self.cfg
        horizon_k = int(math.ceil(cfg.horizon / cfg.period - 1e-9))
        limit_k = int(math.ceil((cfg.horizon + cfg.max_overtime) / cfg.period - 1e-9))
        while self.k < horizon_k or self.outstanding():
            if self.k >= limit_k:
                now = self.k * cfg.period
                for u in self.queue:
                    self.trip_state[u] = CANCELLED
                    self._log(now, "trip", int(self.trips.trip_id[u]), "cancel", ("reason", "overtime"))
                self.queue = []
                if not self.heap:
                    break
            self.step_period()
        return self.result()

    def result(self) -> SimResult:
        n_cancelled = int(np.count_nonzero(self.trip_state == CANCELLED))
        report = build_report(self.served, self.req_hour.tolist(), self.origin_zone, n_cancelled)
        log = EventLog(self.events).sorted()
        return SimResult(
            report=report,
            events=log,
            served=list(self.served),
            state_counts=np.array(self.state_counts, dtype=np.int64).reshape(-1, 4),
            trip_state=self.trip_state.copy(),
            queue_delay=self.queue_delay.copy(),
            pickup_delay=self.pickup_delay.copy(),
            trip_vehicle=self.trip_vehicle.copy(),
            dropoff_time=self.dropoff_time.copy(),
            vehicle_state=self.vstate.copy(),
            vehicle_node=self.vnode.copy(),
            trips=self.trips,
            fleet=self.fleet,
            seed=self.seed,
        )


def run_day(trips: TripTable, tensor: TravelTimeTensor, network: RoadNetwork, cfg: SimConfig, seed=0) -> SimResult:
    """Simulate one day until every trip is served or cancelled."""
    return DaySimulation(trips, tensor, network, cfg, seed).run()


def replay_report(events: EventLog, trips: TripTable, network: Optional[RoadNetwork] = None) -> KpiReport:
    """Rebuild the KPI report from an event log alone (plus the trip table for denominators)."""
    zones = None
    if network is not None and network.zone is not None:
        zones = [("outer" if z == "" else z) for z in network.zone[trips.origin]]
    n_cancelled = events.count("trip", "cancel")
    return build_report(events.served_records(), trips.request_hour.tolist(), zones, n_cancelled)


@dataclass
class MetricSummary:
    mean: Optional[float]
    ci_low: Optional[float]
    ci_high: Optional[float]
    n: int
    values: tuple = ()


def t_interval(values, level: float = 0.95) -> MetricSummary:
    """Mean and two-sided Student-t confidence interval."""
    from scipy import stats

    vals = [float(v) for v in values if v is not None]
    n = len(vals)
    if n == 0:
        return MetricSummary(None, None, None, 0, ())
    mean = math.fsum(vals) / n
    if n == 1:
        return MetricSummary(mean, mean, mean, 1, tuple(vals))
    sd = math.sqrt(math.fsum((v - mean) ** 2 for v in vals) / (n - 1))
    half = float(stats.t.ppf(0.5 + level / 2, n - 1)) * sd / math.sqrt(n)
    return MetricSummary(mean, mean - half, mean + half, n, tuple(vals))


@dataclass
class MonteCarloResult:
    reports: list
    seeds: list
    summary: dict = field(default_factory=dict)
    results: list = field(default_factory=list)

    def values(self, metric: str) -> list:
        return [getattr(r, metric) for r in self.reports]


def _run_one(args):
    trips, tensor, network, cfg, seed, keep = args
    res = run_day(trips, tensor, network, cfg, seed)
    return res if keep else res.report


def monte_carlo(trips: TripTable, tensor: TravelTimeTensor, network: RoadNetwork, cfg: SimConfig,
                n_runs: int = 30, seed: int = 0, stage: str = "monte-carlo", keep_results: bool = False,
                keep_events: bool = False, n_jobs: int = 1, level: float = 0.95) -> MonteCarloResult:
    """Independent seeded runs with per-metric mean and t confidence interval.

    Run ``i`` uses the stream derived from ``(seed, stage, i)``, so results do
    not depend on ``n_jobs``. ``keep_results`` retains each :class:`SimResult`;
    event logs are only recorded with ``keep_events``.
    """
    if n_runs < 1:
        raise ValueError("n_runs must be at least 1")
    seeds = [derive_seed(seed, stage, i) for i in range(n_runs)]
    cfg = replace(cfg, record_events=bool(keep_events))
    jobs = [(trips, tensor, network, cfg, s, keep_results) for s in seeds]
    if n_jobs == 1:
        results = [_run_one(j) for j in jobs]
    else:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_run_one, jobs))
    reports = [r.report for r in results] if keep_results else results
    summary = {m: t_interval([r.overall.value(m) for r in reports], level) for m in METRICS}
    return MonteCarloResult(reports=reports, seeds=seeds, summary=summary, results=results if keep_results else [])
