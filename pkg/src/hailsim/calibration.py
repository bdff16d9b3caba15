"""Hourly edge travel times from observed trip durations.

Per hour, edge times start at a uniform speed and follow projected gradient
descent on the mean squared error between observed trip times and the
current shortest-path time. Shortest paths are recomputed with the current
edge times every iteration. Each edge's gradient is averaged over the
observations whose path uses it, and a step that would raise the loss is
halved until it does not, so the loss never increases.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .network import HOURS, SPEED_MAX_KMH, SPEED_MIN_KMH, RoadNetwork, edge_time_bounds

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TripObservation:
    origin: int
    destination: int
    hour: int
    observed: float

    def __post_init__(self):
        if self.origin == self.destination:
            raise ValueError("observation origin and destination coincide")
        if not self.observed > 0:
            raise ValueError("observed travel time must be positive")
        if not 0 <= self.hour < HOURS:
            raise ValueError("hour outside 0..23")


@dataclass(frozen=True)
class CalibrationConfig:
    v_init: float = 40.0
    learning_rate: float = 0.5
    tol: float = 1e-6
    max_iter: int = 500
    speed_bounds: tuple = (SPEED_MIN_KMH, SPEED_MAX_KMH)
    floor: float = 1e-3
    max_halvings: int = 30

    def __post_init__(self):
        lo, hi = self.speed_bounds
        if not 0 < lo < hi:
            raise ValueError("speed bounds must satisfy 0 < low < high")
        if not lo <= self.v_init <= hi:
            raise ValueError("v_init must lie within the speed bounds")
        if not self.learning_rate > 0 or not self.floor > 0:
            raise ValueError("learning_rate and floor must be positive")


def observations_to_arrays(obs):
    """``(X, y)`` arrays from TripObservation objects or raw tuples."""
    rows = [(o.origin, o.destination, o.hour, o.observed) if isinstance(o, TripObservation) else tuple(o) for o in obs]
    if not rows:
        return np.zeros((0, 3), dtype=np.int64), np.zeros(0)
    arr = np.asarray(rows, dtype=float)
    return arr[:, :3].astype(np.int64), arr[:, 3]


class _PathOracle:
    """Shortest paths (as edge-index lists) for a fixed set of OD pairs."""

    def __init__(self, network: RoadNetwork, origins, destinations):
        self.n = network.n_nodes
        self.src = network.src
        self.dst = network.dst
        self.origins = origins
        self.destinations = destinations
        self.uniq, self.row_of = np.unique(origins, return_inverse=True)
        self._cache = {}

    def evaluate(self, edge_times):
        # parallel edges: keep the quickest
        order = np.lexsort((edge_times, self.dst, self.src))
        s, d = self.src[order], self.dst[order]
        first = np.ones(len(order), dtype=bool)
        first[1:] = (s[1:] != s[:-1]) | (d[1:] != d[:-1])
        keep = order[first]
        edge_id = {(int(a), int(b)): int(e) for a, b, e in zip(self.src[keep], self.dst[keep], keep)}
        g = csr_matrix((edge_times[keep], (self.src[keep], self.dst[keep])), shape=(self.n, self.n))
        dist, pred = dijkstra(g, directed=True, indices=self.uniq, return_predecessors=True)
        times = dist[self.row_of, self.destinations]
        paths = []
        for k, (r, t) in enumerate(zip(self.row_of, self.destinations)):
            key = (int(self.uniq[r]), int(t), pred[r].tobytes())
            hit = self._cache.get(key[:2])
            if hit is not None and hit[0] == key[2]:
                paths.append(hit[1])
                continue
            edges = []
            node = int(t)
            if np.isfinite(times[k]):
                while node != self.uniq[r]:
                    p = int(pred[r, node])
                    edges.append(edge_id[(p, node)])
                    node = p
            arr = np.asarray(edges[::-1], dtype=np.int64)
            self._cache[key[:2]] = (key[2], arr)
            paths.append(arr)
        return times, paths


class EdgeTimeCalibrator(BaseEstimator):
    """Fit hourly per-edge travel times (minutes) to observed trip times.

    Parameters
    ----------
    network : RoadNetwork
    v_init : float, default=40.0
        Uniform initial speed (km/h).
    learning_rate : float, default=0.5
        Initial step on the per-edge averaged gradient; halved on any step
        that would increase the loss.
    tol : float, default=1e-6
        Stop when the relative loss decrease falls below this.
    max_iter : int, default=500
    speed_bounds : tuple, default=(5, 80)
        Edge speeds are kept inside these bounds (km/h).
    floor : float, default=1e-3
        Minimum edge time in minutes.

    Attributes
    ----------
    edge_times_ : ndarray of shape (24, n_edges)
    loss_history_ : dict
        Per calibrated hour, the mean squared error after each accepted step
        (first entry is the initial loss).
    n_iter_ : dict
    diagnostics_ : dict
        ``unreachable`` observation count and ``empty_hours`` left at
        initialisation.
    """

    def __init__(self, network=None, v_init=40.0, learning_rate=0.5, tol=1e-6, max_iter=500,
                 speed_bounds=(SPEED_MIN_KMH, SPEED_MAX_KMH), floor=1e-3, max_halvings=30):
        self.network = network
        self.v_init = v_init
        self.learning_rate = learning_rate
        self.tol = tol
        self.max_iter = max_iter
        self.speed_bounds = speed_bounds
        self.floor = floor
        self.max_halvings = max_halvings

    @classmethod
    def from_config(cls, network, cfg: CalibrationConfig) -> "EdgeTimeCalibrator":
        return cls(network, cfg.v_init, cfg.learning_rate, cfg.tol, cfg.max_iter, cfg.speed_bounds, cfg.floor,
                   cfg.max_halvings)

    def _bounds(self):
        lo, hi = edge_time_bounds(self.network.length_km, self.speed_bounds)
        return np.maximum(lo, self.floor), np.maximum(hi, self.floor)

    def initial_edge_times(self) -> np.ndarray:
        lo, hi = self._bounds()
        return np.clip(60.0 * self.network.length_km / self.v_init, lo, hi)

    def fit(self, X, y=None):
        """Calibrate from ``X`` = (origin, destination, hour) rows and ``y`` = observed minutes.

        ``X`` may also be a sequence of :class:`TripObservation` with ``y`` omitted.
        """
        CalibrationConfig(self.v_init, self.learning_rate, self.tol, self.max_iter, tuple(self.speed_bounds),
                          self.floor, self.max_halvings)
        if self.network is None:
            raise ValueError("EdgeTimeCalibrator needs a network")
        if y is None:
            X, y = observations_to_arrays(X)
        X = np.asarray(X, dtype=np.int64).reshape(-1, 3)
        y = np.asarray(y, dtype=float)
        if len(X) != len(y):
            raise ValueError("X and y differ in length")
        n = self.network.n_nodes
        if len(X) and (X[:, :2].min() < 0 or X[:, :2].max() >= n):
            raise ValueError("observation references a node outside the network")
        if len(X) and (X[:, 2].min() < 0 or X[:, 2].max() >= HOURS):
            raise ValueError("observation hour outside 0..23")
        if np.any(~(y > 0)):
            raise ValueError("observed times must be positive")

        init = self.initial_edge_times()
        self.edge_times_ = np.tile(init, (HOURS, 1))
        self.loss_history_ = {}
        self.n_iter_ = {}
        self.diagnostics_ = {"unreachable": 0, "empty_hours": []}
        for h in range(HOURS):
            sel = X[:, 2] == h
            if not sel.any():
                self.diagnostics_["empty_hours"].append(h)
                continue
            self.edge_times_[h] = self._fit_hour(X[sel, 0], X[sel, 1], y[sel], init.copy(), h)
        if self.diagnostics_["empty_hours"]:
            logger.info("hours without observations kept initial times: %s", self.diagnostics_["empty_hours"])
        return self

    def _fit_hour(self, o, d, obs, t, hour):
        lo, hi = self._bounds()
        oracle = _PathOracle(self.network, o, d)
        pred, paths = oracle.evaluate(t)
        ok = np.isfinite(pred)
        if not ok.all():
            self.diagnostics_["unreachable"] += int((~ok).sum())
            o, d, obs = o[ok], d[ok], obs[ok]
            if not len(obs):
                self.loss_history_[hour] = []
                self.n_iter_[hour] = 0
                return t
            oracle = _PathOracle(self.network, o, d)
            pred, paths = oracle.evaluate(t)
        loss = float(np.mean((pred - obs) ** 2))
        history = [loss]
        eta = self.learning_rate
        it = 0
        E = self.network.n_edges
        while it < self.max_iter and loss > 0:
            lengths = np.fromiter((len(p) for p in paths), dtype=np.int64, count=len(paths))
            flat = np.concatenate(paths) if len(paths) else np.zeros(0, dtype=np.int64)
            resid = np.repeat(2.0 * (pred - obs), lengths)
            grad = np.bincount(flat, weights=resid, minlength=E)
            uses = np.bincount(flat, minlength=E)
            grad = grad / np.maximum(uses, 1)
            accepted = False
            for _ in range(self.max_halvings):
                cand = np.clip(t - eta * grad, lo, hi)
                c_pred, c_paths = oracle.evaluate(cand)
                c_loss = float(np.mean((c_pred - obs) ** 2))
                if c_loss <= loss:
                    accepted = True
                    break
                eta *= 0.5
            if not accepted:
                break
            it += 1
            rel = (loss - c_loss) / loss
            t, pred, paths, loss = cand, c_pred, c_paths, c_loss
            history.append(loss)
            if rel < self.tol:
                break
            eta = min(2.0 * eta, self.learning_rate)
        self.loss_history_[hour] = history
        self.n_iter_[hour] = it
        return t

    def predict(self, X):
        """Shortest-path travel time (minutes) for (origin, destination, hour) rows."""
        check_is_fitted(self, "edge_times_")
        X = np.asarray(X, dtype=np.int64).reshape(-1, 3)
        out = np.empty(len(X))
        for h in np.unique(X[:, 2]):
            sel = X[:, 2] == h
            times, _ = _PathOracle(self.network, X[sel, 0], X[sel, 1]).evaluate(self.edge_times_[h])
            out[sel] = times
        return out


def estimate_edge_times(obs, network: RoadNetwork, cfg: CalibrationConfig = CalibrationConfig()) -> np.ndarray:
    """Calibrated (24, n_edges) edge minutes; see :class:`EdgeTimeCalibrator`."""
    X, y = observations_to_arrays(obs)
    return EdgeTimeCalibrator.from_config(network, cfg).fit(X, y).edge_times_


def hourly_speed_profile(edge_times, network: RoadNetwork) -> np.ndarray:
    """Length-weighted mean edge speed (km/h) per hour."""
    et = np.asarray(edge_times, dtype=float).reshape(-1, network.n_edges)
    if np.any(et <= 0):
        raise ValueError("edge times must be positive")
    ell = network.length_km
    speeds = 60.0 * ell[None, :] / et
    return (speeds * ell[None, :]).sum(axis=1) / ell.sum()
