"""Fleet-size sweeps, geofenced multi-operator service and demand-deletion scenarios."""

from __future__ import annotations

import json
import re
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .kpi import METRICS, KpiSlice, kpi_slice, recompose
from .mfd import MfdModel, scale_travel_times
from .network import HOURS, RoadNetwork, TravelTimeTensor
from .simulator import SimConfig, TripTable, derive_seed, monte_carlo, run_day, t_interval

Z_THRESHOLD = 1.2816
PEAK_HOURS = frozenset({7, 8, 9, 17, 18, 19})
SWEEP_FACTORS = tuple(round(0.8 + 0.1 * i, 1) for i in range(13))


# -- node classification ---------------------------------------------------


@dataclass(frozen=True)
class NodeLabel:
    node: int
    is_high_demand: int
    is_high_attraction: int


def _zscores(counts, floor):
    logc = np.log(np.maximum(np.asarray(counts, dtype=float), floor))
    sd = logc.std()
    if sd == 0 or not np.isfinite(sd):
        return np.zeros_like(logc)
    return (logc - logc.mean()) / sd


def classify_nodes(origin_counts, destination_counts, z_threshold: float = Z_THRESHOLD, floor: float = 1.0) -> list:
    """Flag nodes whose log request (or drop-off) count has a Z-score at or above ``z_threshold``.

    Counts below ``floor`` are raised to it before taking logs; a constant
    count vector labels nothing.
    """
    oc = np.asarray(origin_counts, dtype=float)
    dc = np.asarray(destination_counts, dtype=float)
    if oc.shape != dc.shape or oc.ndim != 1:
        raise ValueError("origin and destination counts must be 1-D and the same length")
    if np.any(oc < 0) or np.any(dc < 0):
        raise ValueError("counts must be non-negative")
    x = _zscores(oc, floor) >= z_threshold
    y = _zscores(dc, floor) >= z_threshold
    return [NodeLabel(i, int(a), int(b)) for i, (a, b) in enumerate(zip(x, y))]


class NodeClassifier(TransformerMixin, BaseEstimator):
    """Learn node labels from a trip table; ``transform`` tags trips.

    ``transform`` returns an int array of shape ``(n_trips, 5)``: origin x,
    origin y, destination x, destination y, peak flag.
    """

    def __init__(self, n_nodes=None, z_threshold=Z_THRESHOLD, floor=1.0, peak_hours=PEAK_HOURS):
        self.n_nodes = n_nodes
        self.z_threshold = z_threshold
        self.floor = floor
        self.peak_hours = peak_hours

    def fit(self, X: TripTable, y=None):
        n = self.n_nodes
        if n is None:
            n = int(max(X.origin.max(initial=-1), X.destination.max(initial=-1))) + 1
        oc = np.bincount(X.origin, minlength=n)
        dc = np.bincount(X.destination, minlength=n)
        self.labels_ = classify_nodes(oc, dc, self.z_threshold, self.floor)
        self.x_ = np.array([lab.is_high_demand for lab in self.labels_], dtype=np.int64)
        self.y_ = np.array([lab.is_high_attraction for lab in self.labels_], dtype=np.int64)
        return self

    def transform(self, X: TripTable):
        check_is_fitted(self, "labels_")
        n = len(self.labels_)
        if len(X) and (X.origin.max() >= n or X.destination.max() >= n):
            raise ValueError("trip references an unlabeled node")
        peak = np.isin(X.request_hour, sorted(self.peak_hours)).astype(np.int64)
        return np.column_stack([self.x_[X.origin], self.y_[X.origin], self.x_[X.destination],
                                self.y_[X.destination], peak]).astype(np.int64)


@dataclass(frozen=True)
class TripTag:
    ox: int
    oy: int
    dx: int
    dy: int
    peak: bool

    @property
    def spatial(self) -> str:
        return f"O{self.ox}{self.oy}D{self.dx}{self.dy}"


def label_trip(origin: int, destination: int, request_time: float, labels, peak_hours=PEAK_HOURS) -> TripTag:
    lab = {l.node: l for l in labels}
    if origin not in lab or destination not in lab:
        raise KeyError("trip endpoint has no node label")
    o, d = lab[origin], lab[destination]
    hour = int(request_time // 60) % HOURS
    return TripTag(o.is_high_demand, o.is_high_attraction, d.is_high_demand, d.is_high_attraction, hour in peak_hours)


# -- demand scenarios ------------------------------------------------------

_PATTERN = re.compile(r"^O([01*])([01*])D([01*])([01*])$")


class InfeasibleScenario(ValueError):
    """Fewer trips bear the label than the scenario wants to delete."""


@dataclass(frozen=True)
class ScenarioLabel:
    """``kind`` is ``random``, ``peak``, ``offpeak`` or ``spatial``.

    Spatial patterns read ``O<x><y>D<x><y>`` where ``*`` matches either bit.
    """

    kind: str = "random"
    pattern: str = ""
    deletion_count: int = 2000

    def __post_init__(self):
        if self.kind not in ("random", "peak", "offpeak", "spatial"):
            raise ValueError(f"unknown scenario kind {self.kind!r}")
        if self.kind == "spatial" and not _PATTERN.match(self.pattern):
            raise ValueError(f"spatial pattern must look like O11D01 (got {self.pattern!r})")
        if self.deletion_count < 0:
            raise ValueError("deletion_count must be non-negative")

    @property
    def name(self) -> str:
        return self.pattern if self.kind == "spatial" else self.kind

    def matches(self, tags: np.ndarray) -> np.ndarray:
        if self.kind == "random":
            return np.ones(len(tags), dtype=bool)
        if self.kind == "peak":
            return tags[:, 4] == 1
        if self.kind == "offpeak":
            return tags[:, 4] == 0
        bits = _PATTERN.match(self.pattern).groups()
        ok = np.ones(len(tags), dtype=bool)
        for col, b in enumerate(bits):
            if b != "*":
                ok &= tags[:, col] == int(b)
        return ok


def standard_scenarios(deletion_count: int = 2000) -> list:
    """Random baseline, peak, offpeak and the 16 spatial labels."""
    out = [ScenarioLabel("random", "", deletion_count), ScenarioLabel("peak", "", deletion_count),
           ScenarioLabel("offpeak", "", deletion_count)]
    for code in range(16):
        b = f"{code:04b}"
        out.append(ScenarioLabel("spatial", f"O{b[:2]}D{b[2:]}", deletion_count))
    return out


def generate_demand_scenario(trips: TripTable, label: ScenarioLabel, tags: np.ndarray, seed) -> TripTable:
    """Delete exactly ``label.deletion_count`` uniformly drawn trips bearing the label."""
    tags = np.asarray(tags)
    if len(tags) != len(trips):
        raise ValueError("tags and trips differ in length")
    pool = np.flatnonzero(label.matches(tags))
    if len(pool) < label.deletion_count:
        raise InfeasibleScenario(f"{label.name}: {len(pool)} matching trips < {label.deletion_count}")
    if label.deletion_count == 0:
        return trips
    rng = np.random.default_rng(seed)
    drop = rng.choice(pool, size=label.deletion_count, replace=False)
    keep = np.ones(len(trips), dtype=bool)
    keep[drop] = False
    return trips.subset(keep)


def read_scenario_file(path) -> tuple:
    """Scenario config: JSON object with ``deletion_count`` and a ``scenarios`` list.

    Each scenario entry is either a name (``random``, ``peak``, ``offpeak``,
    ``O11D01``) or an object with ``kind``, ``pattern``, ``deletion_count``.
    Returns ``(scenarios, extra)`` where ``extra`` holds the remaining keys.
    """
    with open(path) as f:
        data = json.load(f)
    return parse_scenarios(data.get("scenarios", ["random"]), int(data.get("deletion_count", 2000))), data


def parse_scenarios(entries, deletion_count: int = 2000) -> list:
    out = []
    for e in entries:
        if isinstance(e, str):
            if e in ("random", "peak", "offpeak"):
                out.append(ScenarioLabel(e, "", deletion_count))
            else:
                out.append(ScenarioLabel("spatial", e, deletion_count))
        else:
            out.append(ScenarioLabel(e.get("kind", "spatial"), e.get("pattern", ""),
                                     int(e.get("deletion_count", deletion_count))))
    return out


# -- geofencing ------------------------------------------------------------

ZONE_RULES = ("center-center", "outer-outer", "cross")


@dataclass(frozen=True)
class OperatorConfig:
    operator_id: int
    zone_rule: str
    fleet_share: Optional[float] = None
    fleet: Optional[int] = None
    t_max_pu: Optional[float] = None
    t_max_queue: Optional[float] = None

    def __post_init__(self):
        if self.zone_rule not in ZONE_RULES:
            raise ValueError(f"unknown zone rule {self.zone_rule!r}")


DEFAULT_OPERATORS = (OperatorConfig(1, "center-center"), OperatorConfig(2, "outer-outer"), OperatorConfig(3, "cross"))


def largest_remainder(total: int, weights) -> list:
    """Integer split of ``total`` proportional to ``weights``; ties go to the earlier entry."""
    w = np.asarray(weights, dtype=float)
    if total < 0 or np.any(w < 0) or w.sum() <= 0:
        raise ValueError("need a non-negative total and non-negative weights with positive sum")
    quota = total * w / w.sum()
    base = np.floor(quota + 1e-9).astype(int)
    rem = quota - base
    left = total - int(base.sum())
    order = sorted(range(len(w)), key=lambda i: (-rem[i], i))
    for i in order[:max(left, 0)]:
        base[i] += 1
    return [int(b) for b in base]


def trip_zone_rule(trips: TripTable, network: RoadNetwork) -> np.ndarray:
    """Zone rule per trip; airport nodes count as outer."""
    if network.zone is None:
        raise ValueError("network nodes carry no zone tags")
    z = np.asarray(network.zone, dtype=object)
    if np.any(z == ""):
        raise ValueError("untagged node in network")
    center = z == "center"
    oc, dc = center[trips.origin], center[trips.destination]
    return np.where(oc & dc, "center-center", np.where(~oc & ~dc, "outer-outer", "cross")).astype(object)


@dataclass
class GeofencePartition:
    operators: tuple
    trips: list
    shares: list
    fleets: list
    targets: list


def partition_geofence(trips: TripTable, network: RoadNetwork, cfg: SimConfig,
                       operators: Sequence[OperatorConfig] = DEFAULT_OPERATORS) -> GeofencePartition:
    """Split trips by zone rule and the fleet by trip share (or explicit sizes)."""
    rules = trip_zone_rule(trips, network)
    subsets = [trips.subset(rules == op.zone_rule) for op in operators]
    if sum(len(s) for s in subsets) != len(trips):
        raise ValueError("operator zone rules do not partition the trips")
    n = max(len(trips), 1)
    shares = [len(s) / n for s in subsets]
    weights = [op.fleet_share if op.fleet_share is not None else sh for op, sh in zip(operators, shares)]
    total = cfg.fleet
    fleets = largest_remainder(total, weights) if sum(weights) > 0 else [0] * len(operators)
    fleets = [op.fleet if op.fleet is not None else f for op, f in zip(operators, fleets)]
    base_targets = cfg.targets
    per_hour = [largest_remainder(t, weights) if sum(weights) > 0 else [0] * len(operators) for t in base_targets]
    targets = []
    for j, f in enumerate(fleets):
        hourly = [row[j] for row in per_hour]
        if operators[j].fleet is not None and total:
            hourly = [int(round(t * f / total)) for t in base_targets]
        targets.append(tuple(min(t, f) for t in hourly))
    return GeofencePartition(tuple(operators), subsets, shares, fleets, targets)


def _aggregate(slices) -> dict:
    """Trip-weighted aggregate of per-operator slices."""
    return {m: recompose(slices, m) for m in METRICS}


@dataclass
class Comparison:
    metric: str
    mean_diff: Optional[float]
    ci_low: Optional[float]
    ci_high: Optional[float]
    n: int


def paired_difference(a, b, level: float = 0.95) -> Comparison:
    """Mean of ``a - b`` over matched runs with a two-sided t interval."""
    diffs = [x - y for x, y in zip(a, b) if x is not None and y is not None]
    s = t_interval(diffs, level)
    return Comparison("", s.mean, s.ci_low, s.ci_high, s.n)


@dataclass
class GeofenceResult:
    variant: str
    partition: GeofencePartition
    unified: list
    operators: dict
    aggregate: list
    unified_slices: dict
    summary: dict = field(default_factory=dict)

    def rows(self):
        """``(group, metric, mean, ci_low, ci_high, n)`` rows."""
        out = []
        for m in METRICS:
            s = t_interval([u.overall.value(m) for u in self.unified])
            out.append(("unified", m, s.mean, s.ci_low, s.ci_high, s.n))
        for m in METRICS:
            s = t_interval([a[m] for a in self.aggregate])
            out.append(("geofenced", m, s.mean, s.ci_low, s.ci_high, s.n))
        for op, slices in self.operators.items():
            for m in METRICS:
                s = t_interval([sl.value(m) for sl in slices])
                out.append((f"operator{op}", m, s.mean, s.ci_low, s.ci_high, s.n))
        for rule, slices in self.unified_slices.items():
            for m in METRICS:
                s = t_interval([sl.value(m) for sl in slices])
                out.append((f"unified:{rule}", m, s.mean, s.ci_low, s.ci_high, s.n))
        for m in METRICS:
            c = paired_difference([a[m] for a in self.aggregate], [u.overall.value(m) for u in self.unified])
            out.append(("geofenced-minus-unified", m, c.mean_diff, c.ci_low, c.ci_high, c.n))
        return out


def geofence_operators(variant: str = "basic", reallocation: int = 0, op1_t_max_pu: Optional[float] = None,
                       op1_t_max_queue: Optional[float] = None) -> tuple:
    """Operator set for the basic or fine-tuned geofence.

    The fine-tuned variant moves ``reallocation`` vehicles from operator 1 to
    each of operators 2 and 3 and may tighten operator 1's matching limits.
    """
    if variant == "basic":
        return DEFAULT_OPERATORS
    if variant != "fine-tuned":
        raise ValueError(f"unknown geofence variant {variant!r}")
    return (OperatorConfig(1, "center-center", t_max_pu=op1_t_max_pu, t_max_queue=op1_t_max_queue),
            OperatorConfig(2, "outer-outer"), OperatorConfig(3, "cross"))


def _fine_tune(part: GeofencePartition, reallocation: int) -> GeofencePartition:
    if reallocation == 0:
        return part
    f = list(part.fleets)
    moved = min(2 * reallocation, f[0])
    f[0] -= moved
    f[1] += moved // 2
    f[2] += moved - moved // 2
    targets = []
    for j, t in enumerate(part.targets):
        old = max(part.fleets[j], 1)
        targets.append(tuple(min(int(round(x * f[j] / old)), f[j]) for x in t))
    return replace(part, fleets=f, targets=targets)


def run_geofencing(trips: TripTable, tensor: TravelTimeTensor, network: RoadNetwork, cfg: SimConfig,
                   variant: str = "basic", n_runs: int = 30, seed: int = 0, reallocation: int = 0,
                   op1_t_max_pu: Optional[float] = None, op1_t_max_queue: Optional[float] = None,
                   n_jobs: int = 1) -> GeofenceResult:
    """Unified platform versus independent zone-restricted operators on the same seeds."""
    operators = geofence_operators(variant, reallocation, op1_t_max_pu, op1_t_max_queue)
    part = partition_geofence(trips, network, cfg, operators)
    if variant == "fine-tuned":
        part = _fine_tune(part, reallocation)
    rules = trip_zone_rule(trips, network)
    rule_of = dict(zip(trips.trip_id.tolist(), rules.tolist()))

    uni = monte_carlo(trips, tensor, network, cfg, n_runs, seed, "geofence-unified", keep_results=True, n_jobs=n_jobs)
    unified_slices = {r: [] for r in ZONE_RULES}
    for res in uni.results:
        for r in ZONE_RULES:
            recs = [s for s in res.served if rule_of[s.trip] == r]
            unified_slices[r].append(kpi_slice(recs, int(np.count_nonzero(rules == r))))

    per_op = {}
    for op, sub, fleet, targets in zip(part.operators, part.trips, part.fleets, part.targets):
        ocfg = replace(cfg, active_targets=targets, fleet_size=fleet, fleet_factor=1.0,
                       t_max_pu=op.t_max_pu if op.t_max_pu is not None else cfg.t_max_pu,
                       t_max_queue=op.t_max_queue if op.t_max_queue is not None else cfg.t_max_queue)
        if len(sub) == 0:
            per_op[op.operator_id] = [KpiSlice() for _ in range(n_runs)]
            continue
        mc = monte_carlo(sub, tensor, network, ocfg, n_runs, seed, f"geofence-operator{op.operator_id}", n_jobs=n_jobs)
        per_op[op.operator_id] = [r.overall for r in mc.reports]
    aggregate = [_aggregate([per_op[op.operator_id][i] for op in part.operators]) for i in range(n_runs)]
    return GeofenceResult(variant, part, uni.reports, per_op, aggregate, unified_slices)


# -- fleet sweep -----------------------------------------------------------


@dataclass
class SweepPoint:
    factor: float
    summary: dict
    normalized: dict
    reports: list


def hourly_taxi_counts(trips: TripTable, tensor: TravelTimeTensor) -> np.ndarray:
    """Mean number of occupied taxis per hour implied by the trips' ride times."""
    ride = tensor.times[trips.request_hour, trips.origin, trips.destination]
    busy = np.bincount(trips.request_hour, weights=ride, minlength=HOURS)
    return busy / 60.0


def run_fleet_sweep(trips: TripTable, tensor: TravelTimeTensor, network: RoadNetwork, cfg: SimConfig,
                    factors: Sequence[float] = SWEEP_FACTORS, mfd_model: Optional[MfdModel] = None,
                    n_runs: int = 30, seed: int = 0, taxi_share: float = 0.1, hourly_taxis=None,
                    stage: str = "monte-carlo", n_jobs: int = 1) -> list:
    """Monte Carlo KPIs for each fleet factor.

    With an MFD model, hour ``h`` travel times are rescaled from the
    observed accumulation ``N_h / taxi_share`` to that plus the extra
    ``(F - 1) * N_h`` vehicles, where ``N_h`` is the hourly ride-hailing
    fleet in service (``hourly_taxis``, default the active targets).
    Every factor uses the same run seeds.
    """
    if any(not f > 0 for f in factors):
        raise ValueError("fleet factors must be positive")
    n_h = np.asarray(cfg.targets if hourly_taxis is None else hourly_taxis, dtype=float)
    base_n = n_h / taxi_share
    points = []
    for f in factors:
        t = tensor
        if mfd_model is not None and f != 1.0:
            t = scale_travel_times(tensor, network, mfd_model, base_n, base_n + (f - 1.0) * n_h)
        mc = monte_carlo(trips, t, network, replace(cfg, fleet_factor=float(f)), n_runs, seed, stage, n_jobs=n_jobs)
        points.append(SweepPoint(float(f), mc.summary, {}, mc.reports))
    ref = next((p for p in points if p.factor == 1.0), points[0])
    for p in points:
        for m in METRICS:
            a, b = p.summary[m].mean, ref.summary[m].mean
            p.normalized[m] = a / b if a is not None and b not in (None, 0) else None
    return points


# -- demand management -----------------------------------------------------


@dataclass
class ScenarioOutcome:
    label: ScenarioLabel
    feasible: bool
    n_matching: int
    reports: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    tests: dict = field(default_factory=dict)


@dataclass(frozen=True)
class WelchTest:
    statistic: float
    p_value: float
    mean_diff: float
    significant: bool


def welch_test(a, b, alpha: float = 0.01) -> WelchTest:
    """Two-sided Welch t-test of ``mean(a) - mean(b)``."""
    from scipy import stats

    a = np.asarray([x for x in a if x is not None], dtype=float)
    b = np.asarray([x for x in b if x is not None], dtype=float)
    diff = float(a.mean() - b.mean()) if len(a) and len(b) else float("nan")
    if len(a) < 2 or len(b) < 2:
        return WelchTest(float("nan"), 1.0, diff, False)
    if np.array_equal(np.sort(a), np.sort(b)):
        return WelchTest(0.0, 1.0, diff, False)
    if np.ptp(a) == 0 and np.ptp(b) == 0:
        # two constant samples with different values: the difference is certain
        return WelchTest(float(np.copysign(np.inf, diff)), 0.0, diff, True)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = stats.ttest_ind(a, b, equal_var=False)
    p = float(res.pvalue) if np.isfinite(res.pvalue) else 1.0
    return WelchTest(float(res.statistic), p, diff, p < alpha)


def run_demand_experiment(trips: TripTable, tensor: TravelTimeTensor, network: RoadNetwork, cfg: SimConfig,
                          scenarios: Sequence[ScenarioLabel], n_runs: int = 30, seed: int = 0,
                          alpha: float = 0.01, z_threshold: float = Z_THRESHOLD, peak_hours=PEAK_HOURS) -> list:
    """Simulate each deletion scenario ``n_runs`` times and compare with random deletion.

    Run ``i`` of every scenario uses the same simulation seed; the deletion
    draw has its own stream per scenario and run.
    """
    clf = NodeClassifier(network.n_nodes, z_threshold, peak_hours=peak_hours).fit(trips)
    tags = clf.transform(trips)
    scen = list(scenarios)
    if not any(s.kind == "random" for s in scen):
        scen.insert(0, ScenarioLabel("random", "", scen[0].deletion_count if scen else 2000))
    day_cfg = replace(cfg, record_events=False)
    outcomes = []
    for s in scen:
        n_match = int(s.matches(tags).sum())
        out = ScenarioOutcome(s, n_match >= s.deletion_count, n_match)
        if out.feasible:
            for i in range(n_runs):
                reduced = generate_demand_scenario(trips, s, tags, derive_seed(seed, f"demand-delete:{s.name}", i))
                sim_seed = derive_seed(seed, "demand-sim", i)
                out.reports.append(run_day(reduced, tensor, network, day_cfg, sim_seed).report)
            out.summary = {m: t_interval([r.overall.value(m) for r in out.reports]) for m in METRICS}
        outcomes.append(out)
    base = next(o for o in outcomes if o.label.kind == "random")
    for o in outcomes:
        if o.feasible and base.feasible:
            o.tests = {m: welch_test([r.overall.value(m) for r in o.reports],
                                     [r.overall.value(m) for r in base.reports], alpha) for m in METRICS}
    return outcomes


def summary_rows(group: str, summary: dict) -> list:
    return [(group, m, s.mean, s.ci_low, s.ci_high, s.n) for m, s in summary.items()]
