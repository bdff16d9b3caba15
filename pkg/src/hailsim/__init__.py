"""Ride-hailing dispatch simulation with street-hailing baselines and policy experiments."""

from __future__ import annotations

__version__ = "0.1.0"

from .kpi import KpiReport, adec, adm, apwt, dec, recompose
from .matcher import Assignment, FeasiblePairSet, brute_force_assignment, solve_assignment
from .network import RoadNetwork, TravelTimeTensor, all_pairs_shortest_times, floyd_warshall
from .simulator import SimConfig, TripTable, monte_carlo, run_day

__all__ = [
    "__version__",
    "Assignment",
    "FeasiblePairSet",
    "KpiReport",
    "RoadNetwork",
    "SimConfig",
    "TravelTimeTensor",
    "TripTable",
    "adec",
    "adm",
    "all_pairs_shortest_times",
    "apwt",
    "brute_force_assignment",
    "dec",
    "floyd_warshall",
    "monte_carlo",
    "recompose",
    "run_day",
    "solve_assignment",
]
