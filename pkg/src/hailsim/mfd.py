"""Network-wide speed as a function of vehicle accumulation.

Observed taxi activity is binned into fixed intervals. In each interval the
network-wide vehicle count ``n`` is the mean number of taxis moving,
expanded by the taxis' share of traffic, and ``v`` is the distance-weighted
space-mean speed. A fitted curve ``v(n)`` then rescales travel times when
the fleet size changes.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .network import HOURS, SPEED_MAX_KMH, SPEED_MIN_KMH, TravelTimeTensor, all_pairs_shortest_times, edge_time_bounds

FAMILIES = ("linear", "exponential", "power", "log-shift")
PARAM_NAMES = {
    "linear": ("A", "B"),
    "exponential": ("a", "b", "c"),
    "power": ("a", "b", "c"),
    "log-shift": ("a", "b", "c"),
}


@dataclass(frozen=True)
class MfdPoint:
    interval_start: float
    n_taxi: float
    n: float
    v: float


def aggregate_points(records, interval: float = 30.0, taxi_share: float = 0.1) -> list:
    """Bin taxi movement into ``(n, v)`` points.

    ``records`` yields ``(vehicle_id, start_min, duration_min, distance_km)``
    movement legs. A leg contributes its overlap with each interval to the
    taxi count (as vehicle-minutes over interval length) and, pro rata, its
    distance. Intervals with no movement are skipped.
    """
    if not interval > 0:
        raise ValueError("interval must be positive")
    if not 0 < taxi_share <= 1:
        raise ValueError("taxi_share must lie in (0, 1]")
    minutes, km = {}, {}
    for _, start, dur, dist in records:
        start, dur, dist = float(start), float(dur), float(dist)
        if dur <= 0 or dist < 0:
            continue
        end = start + dur
        b = math.floor(start / interval)
        while b * interval < end:
            lo, hi = max(start, b * interval), min(end, (b + 1) * interval)
            if hi > lo:
                frac = (hi - lo) / dur
                minutes[b] = minutes.get(b, 0.0) + (hi - lo)
                km[b] = km.get(b, 0.0) + frac * dist
            b += 1
    out = []
    for b in sorted(minutes):
        n_taxi = minutes[b] / interval
        out.append(MfdPoint(float(b * interval), n_taxi, n_taxi / taxi_share, 60.0 * km[b] / minutes[b]))
    return out


def _curve(family, p, n):
    n = np.asarray(n, dtype=float)
    if family == "linear":
        return p[0] + p[1] * n
    if family == "exponential":
        return p[0] * np.exp(-p[1] * n) + p[2]
    if family == "power":
        return p[0] * np.power(n, p[1]) + p[2]
    if family == "log-shift":
        return p[0] - p[1] * np.log(n + p[2])
    raise ValueError(f"unknown MFD family {family!r}")


def _r2(v, fitted):
    v = np.asarray(v, dtype=float)
    ss_tot = float(np.sum((v - v.mean()) ** 2))
    if ss_tot == 0:
        return 0.0
    return 1.0 - float(np.sum((v - fitted) ** 2)) / ss_tot


@dataclass(frozen=True)
class MfdModel:
    family: str
    params: tuple
    r2: float = float("nan")
    speed_bounds: tuple = (SPEED_MIN_KMH, SPEED_MAX_KMH)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown MFD family {self.family!r}")
        if len(self.params) != len(PARAM_NAMES[self.family]):
            raise ValueError(f"{self.family} takes {len(PARAM_NAMES[self.family])} parameters")
        object.__setattr__(self, "params", tuple(float(x) for x in self.params))

    def speed(self, n):
        """Speed in km/h, clamped to the speed bounds."""
        lo, hi = self.speed_bounds
        return np.clip(_curve(self.family, self.params, n), lo, hi)

    def to_dict(self) -> dict:
        return {"family": self.family, "params": dict(zip(PARAM_NAMES[self.family], self.params)),
                "r2": self.r2, "speed_bounds": list(self.speed_bounds)}

    @classmethod
    def from_dict(cls, d: dict) -> "MfdModel":
        fam = d["family"]
        p = d["params"]
        params = [p[k] for k in PARAM_NAMES[fam]] if isinstance(p, dict) else p
        return cls(fam, tuple(params), float(d.get("r2", float("nan"))), tuple(d.get("speed_bounds", (SPEED_MIN_KMH, SPEED_MAX_KMH))))

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=1)
            f.write("\n")

    @classmethod
    def load(cls, path) -> "MfdModel":
        with open(path) as f:
            return cls.from_dict(json.load(f))


def speed_at(model: MfdModel, n) -> float:
    return float(model.speed(n))


def _power_start(n, v):
    """Best ``(a, b, c)`` over an exponent grid, with ``a`` and ``c`` solved linearly."""
    nn = np.maximum(n, 1e-12)
    best, start = np.inf, [0.0, 1.0, float(v.mean())]
    for b in np.linspace(-3.0, 3.0, 121):
        if abs(b) < 1e-9:
            continue
        A = np.column_stack([nn ** b, np.ones_like(nn)])
        (a, c), *_ = np.linalg.lstsq(A, v, rcond=None)
        sse = float(np.sum((A @ [a, c] - v) ** 2))
        if sse < best:
            best, start = sse, [float(a), float(b), float(c)]
    return start


def _fit_family(family, n, v):
    n = np.asarray(n, dtype=float)
    v = np.asarray(v, dtype=float)
    if family == "linear":
        dn = n - n.mean()
        sxx = float(np.dot(dn, dn))
        if sxx == 0:
            raise ValueError("linear fit needs at least two distinct n values")
        b = float(np.dot(dn, v - v.mean())) / sxx
        return (float(v.mean() - b * n.mean()), b)
    # nonlinear families: bounded least squares from a data-driven start
    span = max(float(n.max() - n.min()), 1.0)
    vmin, vmax = float(v.min()), float(v.max())
    dv = max(vmax - vmin, 1e-6)
    if family == "exponential":
        x0, lb, ub = [dv, 1.0 / span, vmin], [-np.inf, 0.0, -np.inf], [np.inf, np.inf, np.inf]
    elif family == "power":
        if n.min() < 0:
            raise ValueError("power family needs non-negative n")
        x0, lb, ub = _power_start(n, v), [-np.inf, -5.0, -np.inf], [np.inf, 5.0, np.inf]
    else:
        c0 = max(span, 1.0)
        x0 = [vmax + dv, dv / math.log(2.0), c0]
        lb, ub = [-np.inf, -np.inf, max(1e-9, -float(n.min()) + 1e-9)], [np.inf, np.inf, np.inf]
    x0 = np.clip(x0, np.asarray(lb) + 1e-12, np.asarray(ub) - 1e-12)

    def resid(p):
        return _curve(family, p, n) - v

    sol = least_squares(resid, x0, bounds=(lb, ub), x_scale="jac", max_nfev=5000)
    return tuple(float(x) for x in sol.x)


def fit_models(points, families=FAMILIES) -> dict:
    """Least-squares fit of each family to ``points`` (MfdPoint or ``(n, v)``)."""
    pts = [(p.n, p.v) if isinstance(p, MfdPoint) else tuple(p) for p in points]
    if len(pts) < 2:
        raise ValueError("need at least two MFD points")
    n, v = (np.asarray(a, dtype=float) for a in zip(*pts))
    out = {}
    for fam in families:
        params = _fit_family(fam, n, v)
        out[fam] = MfdModel(fam, params, _r2(v, _curve(fam, params, n)))
    return out


class MfdRegressor(RegressorMixin, BaseEstimator):
    """Fit one MFD family; ``predict`` returns clamped speeds.

    ``X`` is the vehicle count, shape ``(n_samples,)`` or ``(n_samples, 1)``.
    """

    def __init__(self, family="linear", speed_bounds=(SPEED_MIN_KMH, SPEED_MAX_KMH)):
        self.family = family
        self.speed_bounds = speed_bounds

    def fit(self, X, y):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown MFD family {self.family!r}")
        n = np.asarray(X, dtype=float).reshape(-1)
        v = np.asarray(y, dtype=float).reshape(-1)
        if len(n) != len(v):
            raise ValueError("X and y differ in length")
        if not (np.isfinite(n).all() and np.isfinite(v).all()):
            raise ValueError("X and y must be finite")
        params = _fit_family(self.family, n, v)
        self.params_ = params
        self.r2_ = _r2(v, _curve(self.family, params, n))
        self.model_ = MfdModel(self.family, params, self.r2_, tuple(self.speed_bounds))
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        return self.model_.speed(np.asarray(X, dtype=float).reshape(-1))


def scale_travel_times(tensor: TravelTimeTensor, network, model: MfdModel, baseline_n, scaled_n) -> TravelTimeTensor:
    """Rescale hourly edge times by ``v(baseline_n[h]) / v(scaled_n[h])`` and recompute shortest times.

    Hours with a unit ratio are copied unchanged. Scaled edge times are kept
    within the speed bounds.
    """
    base = np.broadcast_to(np.asarray(baseline_n, dtype=float), (HOURS,))
    scaled = np.broadcast_to(np.asarray(scaled_n, dtype=float), (HOURS,))
    ratio = model.speed(base) / model.speed(scaled)
    if np.all(ratio == 1.0):
        return tensor
    lo, hi = edge_time_bounds(network.length_km, model.speed_bounds)
    et = np.array(tensor.edge_times, dtype=float)
    for h in range(HOURS):
        if ratio[h] != 1.0:
            et[h] = np.clip(et[h] * ratio[h], lo, hi)
    out = all_pairs_shortest_times(et, network)
    times = np.array(out.times)
    for h in range(HOURS):
        if ratio[h] == 1.0:
            times[h] = tensor.times[h]
    return TravelTimeTensor(times, et)


def write_points_csv(points, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["interval_start", "n", "v", "n_taxi"])
        for p in points:
            w.writerow([repr(float(p.interval_start)), repr(float(p.n)), repr(float(p.v)), repr(float(p.n_taxi))])


def read_points_csv(path) -> list:
    with open(path, newline="") as f:
        return [MfdPoint(float(r["interval_start"]), float(r.get("n_taxi") or 0.0), float(r["n"]), float(r["v"]))
                for r in csv.DictReader(f)]
