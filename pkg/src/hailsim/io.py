"""Trip-record ingestion and experiment configuration."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from collections import Counter
from dataclasses import asdict, dataclass, field, fields
from datetime import datetime
from pathlib import Path
from typing import Optional

import numpy as np

from .network import HOURS, RoadNetwork, snap_points
from .simulator import TripTable

logger = logging.getLogger(__name__)

TIME_FORMAT = "%Y-%m-%d %H:%M:%S"
TRIP_COLUMNS = ("vehicle_id", "pickup_time", "dropoff_time", "pickup_lat", "pickup_lon", "dropoff_lat", "dropoff_lon")
REJECTIONS = ("unparseable", "bad_times", "unsnapped", "loop", "too_short", "too_long")


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


class DataError(ValueError):
    """Missing or unusable input data."""


@dataclass(frozen=True)
class TripRecord:
    vehicle_id: str
    pickup_time: datetime
    dropoff_time: datetime
    pickup_lat: float
    pickup_lon: float
    dropoff_lat: float
    dropoff_lon: float
    deadhead_km: Optional[float] = None

    def __post_init__(self):
        if not self.dropoff_time > self.pickup_time:
            raise ValueError("drop-off must follow pickup")

    @property
    def duration_min(self) -> float:
        return (self.dropoff_time - self.pickup_time).total_seconds() / 60.0


@dataclass
class LoadedTrips:
    """Accepted trips, their calibration observations and rejection counts.

    ``observations`` rows are ``(origin, destination, hour, minutes)``.
    """

    trips: TripTable
    observations: np.ndarray
    diagnostics: Counter
    vehicle_ids: list = field(default_factory=list)
    day: Optional[str] = None

    @property
    def n_rows(self) -> int:
        return self.diagnostics["rows"]


def _parse_row(row) -> TripRecord:
    dh = row.get("deadhead_km") or None
    return TripRecord(
        row["vehicle_id"],
        datetime.strptime(row["pickup_time"].strip(), TIME_FORMAT),
        datetime.strptime(row["dropoff_time"].strip(), TIME_FORMAT),
        float(row["pickup_lat"]), float(row["pickup_lon"]),
        float(row["dropoff_lat"]), float(row["dropoff_lon"]),
        float(dh) if dh is not None else None,
    )


def load_trips(path, network: RoadNetwork, snap_radius: float = 0.2, min_duration: float = 1.0,
               max_duration: float = 180.0) -> LoadedTrips:
    """Read trip records, snap both ends to nodes and drop unusable trips.

    Request times are minutes since local midnight of the earliest pickup
    date in the file. Every input row is either accepted or counted under
    exactly one rejection reason.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"trip file not found: {path}")
    diag = Counter({k: 0 for k in ("rows", "accepted") + REJECTIONS})
    recs = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is not None:
            missing = set(TRIP_COLUMNS) - set(reader.fieldnames)
            if missing:
                raise DataError(f"trip file lacks columns: {sorted(missing)}")
        for row in reader:
            diag["rows"] += 1
            try:
                recs.append(_parse_row(row))
            except ValueError as e:
                key = "bad_times" if "drop-off" in str(e) else "unparseable"
                diag[key] += 1
            except (TypeError, KeyError):
                diag["unparseable"] += 1
    if diag["unparseable"]:
        logger.warning("skipped %d unparseable trip rows in %s", diag["unparseable"], path)
    empty = LoadedTrips(TripTable.from_arrays([], [], []), np.zeros((0, 4)), diag)
    if not recs:
        return empty

    o = snap_points([r.pickup_lat for r in recs], [r.pickup_lon for r in recs], network, snap_radius)
    d = snap_points([r.dropoff_lat for r in recs], [r.dropoff_lon for r in recs], network, snap_radius)
    day0 = min(r.pickup_time for r in recs).replace(hour=0, minute=0, second=0, microsecond=0)
    keep_t, keep_o, keep_d, keep_dur, vids = [], [], [], [], []
    for r, a, b in zip(recs, o, d):
        dur = r.duration_min
        if a < 0 or b < 0:
            diag["unsnapped"] += 1
        elif a == b:
            diag["loop"] += 1
        elif dur < min_duration:
            diag["too_short"] += 1
        elif dur > max_duration:
            diag["too_long"] += 1
        else:
            keep_t.append((r.pickup_time - day0).total_seconds() / 60.0)
            keep_o.append(int(a))
            keep_d.append(int(b))
            keep_dur.append(dur)
            vids.append(r.vehicle_id)
    diag["accepted"] = len(keep_t)
    trips = TripTable.from_arrays(keep_t, keep_o, keep_d)
    obs = np.column_stack([trips.origin, trips.destination, trips.request_hour,
                           np.asarray(keep_dur)[np.argsort(keep_t, kind="stable")]]) if keep_t else np.zeros((0, 4))
    order = np.argsort(keep_t, kind="stable")
    return LoadedTrips(trips, obs, diag, [vids[i] for i in order], day0.strftime("%Y-%m-%d"))


def read_fleet_csv(path) -> tuple:
    """Hourly active-fleet targets from ``hour,active`` rows."""
    out = [None] * HOURS
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            out[int(row["hour"])] = int(row["active"])
    if any(v is None for v in out):
        raise DataError(f"fleet file {path} must list all 24 hours")
    return tuple(out)


@dataclass
class ExperimentConfig:
    """Everything one experiment needs; loaded from a JSON object.

    Relative paths resolve against the config file's directory. When no
    network is given, a synthetic instance is generated from ``synth``.
    """

    nodes: Optional[str] = None
    edges: Optional[str] = None
    trips: Optional[str] = None
    gps: Optional[str] = None
    fleet: Optional[str] = None
    edge_times: Optional[str] = None
    tensor: Optional[str] = None
    synth: dict = field(default_factory=dict)
    synth_seed: int = 0
    active_targets: Optional[list] = None
    t_max_pu: object = 16.0
    t_max_queue: object = 20.0
    period: float = 1.0
    fleet_size: Optional[int] = None
    factors: list = field(default_factory=lambda: [round(0.8 + 0.1 * i, 1) for i in range(13)])
    mfd: Optional[dict] = None
    taxi_share: float = 0.1
    geofence_variant: str = "basic"
    reallocation: int = 0
    op1_t_max_pu: Optional[float] = None
    op1_t_max_queue: Optional[float] = None
    scenarios: list = field(default_factory=lambda: ["random"])
    deletion_count: int = 2000
    z_threshold: float = 1.2816
    peak_hours: list = field(default_factory=lambda: [7, 8, 9, 17, 18, 19])
    alpha: float = 0.01
    street_apwt: Optional[float] = None
    snap_radius: float = 0.2
    min_duration: float = 1.0
    max_duration: float = 180.0
    calibration: dict = field(default_factory=dict)
    gps_max_gap_s: float = 300.0
    seed: int = 0
    runs: int = 30
    jobs: int = 1
    out: str = "out"
    record_events: bool = False

    @classmethod
    def from_dict(cls, data: dict, base_dir=None) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**data)
        if base_dir is not None:
            for key in ("nodes", "edges", "trips", "gps", "fleet", "edge_times", "tensor"):
                v = getattr(cfg, key)
                if v is not None and not Path(v).is_absolute():
                    setattr(cfg, key, str(Path(base_dir) / v))
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as f:
                data = json.load(f)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"config {path} is not valid JSON: {e}") from None
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data, Path(path).parent)

    def validate(self) -> None:
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise ConfigError("seed must be an explicit integer")
        if self.runs < 1:
            raise ConfigError("runs must be at least 1")
        if (self.nodes is None) != (self.edges is None):
            raise ConfigError("nodes and edges must be given together")
        if self.geofence_variant not in ("basic", "fine-tuned"):
            raise ConfigError("geofence_variant must be basic or fine-tuned")
        if not 0 < self.taxi_share <= 1:
            raise ConfigError("taxi_share must lie in (0, 1]")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form (output directory excluded)."""
        d = self.to_dict()
        d.pop("out", None)
        d.pop("jobs", None)
        blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()
