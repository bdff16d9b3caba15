"""Street-hailing deadheading from raw taxi GPS traces.

Each vehicle-day trace is cut into runs of constant status. Runs flagged as
deadheading contribute their elapsed time and summed great-circle hop
lengths, unless some consecutive pair of fixes inside the run is more than
``max_gap_s`` apart, in which case the whole run is discarded.
"""

from __future__ import annotations

import csv
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime, timedelta

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .kpi import dec
from .network import haversine_km_array

logger = logging.getLogger(__name__)

DEADHEADING, OCCUPIED = "deadheading", "occupied"
MAX_GAP_S = 300.0
_EPOCH = datetime(1970, 1, 1)


@dataclass(frozen=True)
class GpsPoint:
    vehicle_id: str
    timestamp: float
    lat: float
    lon: float
    status: str


@dataclass(frozen=True)
class DeadheadSegment:
    vehicle_id: str
    date: str
    t_start: float
    t_end: float
    duration_min: float
    distance_km: float
    n_points: int = 0


@dataclass(frozen=True)
class DeadheadDay:
    vehicle_id: str
    date: str
    deadheading_time_min: float
    deadheading_distance_km: float


@dataclass
class ExtractionResult:
    days: list
    segments: list
    diagnostics: Counter = field(default_factory=Counter)

    @property
    def total_km(self) -> float:
        return math.fsum(d.deadheading_distance_km for d in self.days)

    @property
    def total_min(self) -> float:
        return math.fsum(d.deadheading_time_min for d in self.days)


def _date_of(ts: float, utc_offset_s: float) -> str:
    return (_EPOCH + timedelta(seconds=ts + utc_offset_s)).strftime("%Y-%m-%d")


def _as_point(p) -> GpsPoint:
    if isinstance(p, GpsPoint):
        return p
    vid, ts, lat, lon, status = p
    return GpsPoint(str(vid), float(ts), float(lat), float(lon), str(status))


def _normalise_status(s: str, diag: Counter) -> str:
    s = s.strip().lower()
    if s in (DEADHEADING, OCCUPIED):
        return s
    diag["unknown_status"] += 1
    return OCCUPIED


def _valid(p: GpsPoint) -> bool:
    return (math.isfinite(p.timestamp) and math.isfinite(p.lat) and math.isfinite(p.lon)
            and -90 <= p.lat <= 90 and -180 <= p.lon <= 180)


def extract_deadheading(points, max_gap_s: float = MAX_GAP_S, utc_offset_s: float = 0.0) -> ExtractionResult:
    """Per-vehicle, per-day deadheading minutes and km.

    Points may arrive in any order; they are sorted by ``(vehicle, timestamp)``
    and repeated timestamps keep the first fix. Timestamps are seconds since
    1970-01-01; ``utc_offset_s`` shifts them to local time before the day
    split at midnight. Vehicle-days with no valid deadheading still get a
    zero row.
    """
    diag = Counter()
    pts = []
    for raw in points:
        try:
            p = _as_point(raw)
        except (TypeError, ValueError):
            diag["malformed"] += 1
            continue
        if not _valid(p):
            diag["malformed"] += 1
            continue
        pts.append(p)
    if diag["malformed"]:
        logger.warning("skipped %d malformed GPS records", diag["malformed"])
    pts.sort(key=lambda p: (p.vehicle_id, p.timestamp))

    days, segments = [], []
    i = 0
    while i < len(pts):
        vid = pts[i].vehicle_id
        date = _date_of(pts[i].timestamp, utc_offset_s)
        j = i
        trace = []
        last_ts = None
        while j < len(pts) and pts[j].vehicle_id == vid and _date_of(pts[j].timestamp, utc_offset_s) == date:
            if pts[j].timestamp == last_ts:
                diag["duplicate_timestamp"] += 1
            else:
                trace.append(pts[j])
                last_ts = pts[j].timestamp
            j += 1
        i = j
        day_segments = _segments(vid, date, trace, max_gap_s, diag)
        segments.extend(day_segments)
        days.append(DeadheadDay(vid, date, math.fsum(s.duration_min for s in day_segments),
                                math.fsum(s.distance_km for s in day_segments)))
    if diag["unknown_status"]:
        logger.info("%d GPS points with unknown status treated as occupied", diag["unknown_status"])
    diag["points"] = len(pts)
    diag["valid_segments"] = len(segments)
    return ExtractionResult(days, segments, diag)


def _segments(vid, date, trace, max_gap_s, diag) -> list:
    out = []
    status = [_normalise_status(p.status, diag) for p in trace]
    k = 0
    while k < len(trace):
        m = k
        while m + 1 < len(trace) and status[m + 1] == status[k]:
            m += 1
        if status[k] == DEADHEADING:
            run = trace[k:m + 1]
            ts = np.array([p.timestamp for p in run])
            if len(run) > 1 and np.max(np.diff(ts)) > max_gap_s:
                diag["gap_segments"] += 1
            else:
                lat = np.array([p.lat for p in run])
                lon = np.array([p.lon for p in run])
                hops = haversine_km_array(lat[:-1], lon[:-1], lat[1:], lon[1:]) if len(run) > 1 else np.zeros(0)
                out.append(DeadheadSegment(vid, date, float(ts[0]), float(ts[-1]), (ts[-1] - ts[0]) / 60.0,
                                           math.fsum(hops.tolist()), len(run)))
        k = m + 1
    return out


class DeadheadExtractor(TransformerMixin, BaseEstimator):
    """Transformer wrapper: GPS points in, :class:`DeadheadDay` rows out.

    The fitted attributes ``segments_`` and ``diagnostics_`` describe the
    last transform.
    """

    def __init__(self, max_gap_s=MAX_GAP_S, utc_offset_s=0.0):
        self.max_gap_s = max_gap_s
        self.utc_offset_s = utc_offset_s

    def fit(self, X=None, y=None):
        if not self.max_gap_s > 0:
            raise ValueError("max_gap_s must be positive")
        return self

    def transform(self, X):
        res = extract_deadheading(X, self.max_gap_s, self.utc_offset_s)
        self.segments_ = res.segments
        self.diagnostics_ = res.diagnostics
        return res.days


def street_adm(days_or_total_km, n_trips: int) -> float:
    """Total deadheading km divided by the number of trips."""
    if n_trips <= 0:
        raise ValueError("n_trips must be positive")
    if isinstance(days_or_total_km, (int, float)):
        total = float(days_or_total_km)
    else:
        total = math.fsum(d.deadheading_distance_km for d in days_or_total_km)
    return total / n_trips


def street_adec(segments, n_trips: int) -> float:
    """Deadheading energy per trip, each segment priced at its own distance and duration."""
    if n_trips <= 0:
        raise ValueError("n_trips must be positive")
    return math.fsum(dec(s.distance_km, s.duration_min) if s.duration_min > 0 else 0.0 for s in segments) / n_trips


def parse_timestamp(value: str) -> float:
    """Seconds since 1970-01-01 from epoch seconds or ``YYYY-MM-DD HH:MM:SS`` (naive local time)."""
    value = value.strip()
    try:
        return float(value)
    except ValueError:
        pass
    dt = datetime.strptime(value, "%Y-%m-%d %H:%M:%S")
    return (dt - _EPOCH).total_seconds()


def read_gps_csv(path):
    """GPS points from ``vehicle_id,timestamp,longitude,latitude,status``; returns ``(points, n_malformed)``."""
    points, bad = [], 0
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        missing = {"vehicle_id", "timestamp", "longitude", "latitude", "status"} - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"GPS file lacks columns: {sorted(missing)}")
        for row in reader:
            try:
                points.append(GpsPoint(row["vehicle_id"], parse_timestamp(row["timestamp"]),
                                       float(row["latitude"]), float(row["longitude"]), row["status"]))
            except (TypeError, ValueError):
                bad += 1
    if bad:
        logger.warning("skipped %d unparseable GPS rows in %s", bad, path)
    return points, bad


def write_gps_csv(path, points) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["vehicle_id", "timestamp", "longitude", "latitude", "status"])
        for p in map(_as_point, points):
            w.writerow([p.vehicle_id, repr(p.timestamp), repr(p.lon), repr(p.lat), p.status])


def write_days_csv(path, days) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["vehicle_id", "date", "deadheading_time_min", "deadheading_distance_km"])
        for d in days:
            w.writerow([d.vehicle_id, d.date, repr(float(d.deadheading_time_min)), repr(float(d.deadheading_distance_km))])
