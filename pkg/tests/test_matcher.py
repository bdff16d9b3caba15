from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hailsim.matcher import FeasiblePairSet, brute_force_assignment, solve_assignment, to_deciseconds


def _exhaustive(cost):
    """Plain enumeration over partial injections, maximising matches then minimising cost."""
    m, n = cost.shape
    best = (0, 0.0)
    for k in range(min(m, n), 0, -1):
        found = None
        for rows in itertools.combinations(range(m), k):
            for cols in itertools.permutations(range(n), k):
                c = [cost[r, q] for r, q in zip(rows, cols)]
                if all(np.isfinite(c)):
                    s = sum(c)
                    if found is None or s < found:
                        found = s
        if found is not None:
            return (k, found)
    return best


def test_brute_force_matches_enumeration():
    rng = np.random.default_rng(5)
    for _ in range(40):
        m, n = rng.integers(1, 5, 2)
        c = rng.integers(0, 50, (m, n)).astype(float)
        c[rng.random((m, n)) < 0.3] = np.inf
        a = brute_force_assignment(FeasiblePairSet.from_matrix(c))
        k, s = _exhaustive(c)
        assert (len(a), a.total_cost) == (k, pytest.approx(s))


def test_empty_and_all_infeasible():
    assert len(solve_assignment(FeasiblePairSet.from_matrix(np.zeros((0, 3))))) == 0
    a = solve_assignment(FeasiblePairSet.from_matrix(np.full((2, 2), np.inf)))
    assert len(a) == 0 and a.total_cost == 0.0


def test_prefers_more_matches_over_lower_cost():
    c = np.array([[1.0, 100.0], [2.0, np.inf]])
    a = solve_assignment(FeasiblePairSet.from_matrix(c))
    assert sorted(a.pairs) == [(0, 1), (1, 0)]


def test_deciseconds_rounding():
    assert to_deciseconds(np.array([[1.0, 0.05, np.inf]]))[0, :2].tolist() == [600, 30]


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_lap_equals_brute_force(m, n, seed):
    rng = np.random.default_rng(seed)
    c = rng.integers(0, 300, (m, n)) / 10.0
    c[rng.random((m, n)) < 0.25] = np.inf
    p = FeasiblePairSet.from_matrix(c)
    a, b = solve_assignment(p), brute_force_assignment(p)
    assert len(a) == len(b) and a.total_cost == pytest.approx(b.total_cost, abs=1e-9)
    trips = [t for t, _ in a.pairs]
    vehs = [v for _, v in a.pairs]
    assert len(set(trips)) == len(trips) and len(set(vehs)) == len(vehs)
    assert all(np.isfinite(c[t, v]) for t, v in a.pairs)
