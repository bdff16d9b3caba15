from __future__ import annotations

import heapq

import numpy as np
import pytest

from hailsim.network import RoadNetwork, grid_network
from hailsim.synth import SynthSpec, generate_synthetic_instance


def random_strong_graph(n, extra, rng):
    """Ring plus random chords: strongly connected, dyadic edge times."""
    src = list(range(n)) + rng.integers(0, n, extra).tolist()
    dst = [(i + 1) % n for i in range(n)] + rng.integers(0, n, extra).tolist()
    keep = [i for i in range(len(src)) if src[i] != dst[i]]
    src = np.array([src[i] for i in keep])
    dst = np.array([dst[i] for i in keep])
    lat = 30.0 + rng.random(n) * 0.05
    lon = 104.0 + rng.random(n) * 0.05
    net = RoadNetwork.from_latlon(lat, lon, src, dst, np.ones(len(src)))
    return net


def dijkstra(n, src, dst, w, s):
    adj = [[] for _ in range(n)]
    for a, b, c in zip(src, dst, w):
        adj[a].append((b, c))
    dist = [np.inf] * n
    dist[s] = 0.0
    pq = [(0.0, s)]
    while pq:
        d, u = heapq.heappop(pq)
        if d > dist[u]:
            continue
        for v, c in adj[u]:
            if d + c < dist[v]:
                dist[v] = d + c
                heapq.heappush(pq, (dist[v], v))
    return dist


@pytest.fixture(scope="session")
def small_instance():
    inst = generate_synthetic_instance(SynthSpec(rows=6, cols=6, n_trips=500, fleet_size=15, preset="hotspot"), 3)
    return inst, inst.tensor()


@pytest.fixture
def grid3():
    return grid_network(3, 3, 1.0)
