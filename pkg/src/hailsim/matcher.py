"""Batch trip-vehicle matching.

Feasible pairs form a bipartite graph whose edge weights are pickup delays.
The assignment is solved with a Jonker-Volgenant style shortest augmenting
path method on integer costs (deciseconds), after padding every trip with a
private "unmatched" column priced above any feasible matching. That makes the
optimum maximise the number of matched trips first and minimise total pickup
delay second.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

DECISECONDS_PER_MINUTE = 600
FORBIDDEN = np.inf


@dataclass(frozen=True, eq=False)
class FeasiblePairSet:
    """Cost matrix of pickup delays (minutes) over ordered trips x vehicles.

    Infeasible entries hold ``inf``.
    """

    trips: np.ndarray
    vehicles: np.ndarray
    cost: np.ndarray

    def __post_init__(self):
        if self.cost.shape != (len(self.trips), len(self.vehicles)):
            raise ValueError("cost shape does not match trips x vehicles")
        if np.any(self.cost < 0):
            raise ValueError("pickup delays must be non-negative")

    @classmethod
    def from_matrix(cls, cost) -> "FeasiblePairSet":
        cost = np.asarray(cost, dtype=float)
        if cost.ndim != 2:
            cost = cost.reshape(len(cost), -1) if cost.size else np.zeros((0, 0))
        return cls(np.arange(cost.shape[0]), np.arange(cost.shape[1]), cost)

    @property
    def feasible(self) -> np.ndarray:
        return np.isfinite(self.cost)


@dataclass(frozen=True)
class Assignment:
    """Matched ``(trip_index, vehicle_index)`` pairs into a FeasiblePairSet."""

    pairs: tuple = field(default_factory=tuple)
    total_cost: float = 0.0

    def __len__(self):
        return len(self.pairs)


def build_feasible_pairs(
    trip_ids: Sequence[int],
    trip_origins: Sequence[int],
    trip_queue_delays: Sequence[float],
    vehicle_ids: Sequence[int],
    vehicle_nodes: Sequence[int],
    tensor,
    hour: int,
    t_max_pu: float,
    t_max_queue: float,
) -> FeasiblePairSet:
    """Pickup-delay matrix for queued trips against vacant vehicles.

    Trips whose queuing delay already exceeds ``t_max_queue`` are dropped;
    pairs slower than ``t_max_pu`` (or unreachable) are marked infeasible.
    """
    trip_ids = np.asarray(trip_ids, dtype=np.int64)
    origins = np.asarray(trip_origins, dtype=np.int64)
    keep = np.asarray(trip_queue_delays, dtype=float) <= t_max_queue
    trip_ids, origins = trip_ids[keep], origins[keep]
    vehicle_ids = np.asarray(vehicle_ids, dtype=np.int64)
    nodes = np.asarray(vehicle_nodes, dtype=np.int64)
    cost = np.array(tensor.times[hour][np.ix_(nodes, origins)].T, dtype=float)
    cost[cost > t_max_pu] = FORBIDDEN
    return FeasiblePairSet(trip_ids, vehicle_ids, cost)


def to_deciseconds(cost: np.ndarray) -> np.ndarray:
    """Integer deciseconds for finite entries, -1 for infeasible ones."""
    out = np.full(cost.shape, -1, dtype=np.int64)
    fin = np.isfinite(cost)
    out[fin] = np.rint(cost[fin] * DECISECONDS_PER_MINUTE).astype(np.int64)
    return out


def _augmenting_path_lap(cost: np.ndarray) -> np.ndarray:
    """Optimal row->column assignment of a dense integer matrix with rows <= cols.

    Each row is inserted by a Dijkstra search over reduced costs for the
    shortest augmenting path to a free column, then the duals are updated so
    reduced costs stay non-negative.
    """
    m, n = cost.shape
    big = np.iinfo(np.int64).max // 4
    u = np.zeros(m, dtype=np.int64)
    v = np.zeros(n, dtype=np.int64)
    col4row = np.full(m, -1, dtype=np.int64)
    row4col = np.full(n, -1, dtype=np.int64)
    for cur in range(m):
        shortest = np.full(n, big, dtype=np.int64)
        path = np.full(n, -1, dtype=np.int64)
        scanned_cols = np.zeros(n, dtype=bool)
        scanned_rows = [cur]
        i = cur
        min_val = 0
        sink = -1
        while sink < 0:
            reduced = min_val + cost[i] - u[i] - v
            upd = (~scanned_cols) & (reduced < shortest)
            path[upd] = i
            shortest[upd] = reduced[upd]
            masked = np.where(scanned_cols, big, shortest)
            lowest = masked.min()
            ties = np.flatnonzero(masked == lowest)
            # prefer a free column among ties so the search ends early
            free = ties[row4col[ties] < 0]
            j = int(free[0]) if len(free) else int(ties[0])
            min_val = int(lowest)
            scanned_cols[j] = True
            if row4col[j] < 0:
                sink = j
            else:
                i = int(row4col[j])
                scanned_rows.append(i)
        u[cur] += min_val
        for r in scanned_rows[1:]:
            u[r] += min_val - shortest[col4row[r]]
        v[scanned_cols] -= min_val - shortest[scanned_cols]
        j = sink
        while True:
            i = int(path[j])
            row4col[j] = i
            col4row[i], j = j, int(col4row[i])
            if i == cur:
                break
    return col4row


def _solve_int(icost: np.ndarray) -> list:
    """Max-cardinality, min-cost matching on integer costs (-1 = infeasible)."""
    m, n = icost.shape
    feas = icost >= 0
    if m == 0 or n == 0 or not feas.any():
        return []
    rows = np.flatnonzero(feas.any(axis=1))
    cols = np.flatnonzero(feas.any(axis=0))
    sub = icost[np.ix_(rows, cols)]
    fsub = sub >= 0
    vals = sub[fsub]
    g = math.gcd(*(int(x) for x in np.unique(vals))) if vals.any() else 0
    if g > 1:
        sub = np.where(fsub, sub // g, -1)
    mr, nc = sub.shape
    max_cost = int(sub[fsub].max())
    unmatched = mr * max_cost + 1
    forbidden = (mr + 1) * unmatched + 1
    padded = np.full((mr, nc + mr), forbidden, dtype=np.int64)
    padded[:, :nc] = np.where(fsub, sub, forbidden)
    padded[np.arange(mr), nc + np.arange(mr)] = unmatched
    col4row = _augmenting_path_lap(padded)
    return [(int(rows[r]), int(cols[c])) for r, c in enumerate(col4row) if c < nc]


def solve_assignment(pairs: FeasiblePairSet) -> Assignment:
    """Optimal batch matching: most trips matched, then least total pickup delay."""
    icost = to_deciseconds(pairs.cost)
    matched = sorted(_solve_int(icost))
    total = sum(int(icost[r, c]) for r, c in matched) / DECISECONDS_PER_MINUTE
    return Assignment(tuple(matched), total)


def brute_force_assignment(pairs: FeasiblePairSet, max_size: int = 8) -> Assignment:
    """Exhaustive search over every feasible matching (test oracle).

    Walks trips in order; each either takes one unused feasible vehicle or
    stays unmatched. Results are memoised on (trip, used-vehicle set), which
    keeps the search exhaustive while making 8x8 instances cheap. Ties on
    (cardinality, cost) go to the lexicographically smallest pair list.
    """
    m, n = pairs.cost.shape
    if m > max_size or n > max_size:
        raise ValueError(f"brute force limited to {max_size}x{max_size}, got {m}x{n}")
    icost = to_deciseconds(pairs.cost)
    options = [[(j, int(icost[i, j])) for j in range(n) if icost[i, j] >= 0] for i in range(m)]

    @lru_cache(maxsize=None)
    def best(i: int, used: int):
        # returns (-cardinality, cost, pairs) minimised lexicographically
        if i == m:
            return (0, 0, ())
        choices = []
        for j, c in options[i]:
            if not used >> j & 1:
                k, tot, rest = best(i + 1, used | 1 << j)
                choices.append((k - 1, tot + c, ((i, j),) + rest))
        choices.append(best(i + 1, used))
        return min(choices)

    _, tot, matched = best(0, 0)
    return Assignment(tuple(matched), tot / DECISECONDS_PER_MINUTE)


def cost_matrix_csv(pairs: FeasiblePairSet, path) -> None:
    """Debug dump of one period's cost matrix."""
    with open(path, "w") as f:
        f.write("trip," + ",".join(str(int(v)) for v in pairs.vehicles) + "\n")
        for t, row in zip(pairs.trips, pairs.cost):
            f.write(str(int(t)) + "," + ",".join("" if not np.isfinite(c) else repr(float(c)) for c in row) + "\n")
