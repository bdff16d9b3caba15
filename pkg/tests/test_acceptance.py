"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest -s tests/test_acceptance.py`` to see the verdict lines.
Tolerances and instance sizes are fixed here; see README for the instances.
"""

from __future__ import annotations

import filecmp
import json
import time

import numpy as np
import pytest

from hailsim.baseline import GpsPoint, extract_deadheading
from hailsim.cli import main as cli_main
from hailsim.kpi import ServedRecord, build_report, dec, recompose
from hailsim.matcher import FeasiblePairSet, brute_force_assignment, solve_assignment
from hailsim.mfd import MfdModel, MfdRegressor, speed_at
from hailsim.network import HOURS, all_pairs_shortest_times, grid_network, speed_to_edge_times
from hailsim.calibration import EdgeTimeCalibrator
from hailsim.policy import paired_difference, parse_scenarios, run_demand_experiment, run_fleet_sweep, run_geofencing
from hailsim.simulator import CANCELLED, SERVED, SimConfig, monte_carlo, replay_report, run_day, t_interval
from hailsim.synth import SynthSpec, generate_synthetic_instance

from conftest import dijkstra, random_strong_graph

REFERENCE_MFD = MfdModel("linear", (36.998, -0.000202))


def verdict(number, title, ok, detail=""):
    line = f"ACCEPTANCE {number:>2} {'PASS' if ok else 'FAIL'} {title}"
    if detail:
        line += f" | {detail}"
    print(line)
    assert ok, line


def _rows(lines):
    return "; ".join(lines)


# 1 -------------------------------------------------------------------------


def test_01_assignment_optimality():
    rng = np.random.default_rng(20150401)
    t0 = time.perf_counter()
    mismatches = 0
    for i in range(200):
        k = 2 + i % 6
        cost = rng.integers(0, 300, (k, k)) / 10.0
        cost[rng.random((k, k)) < 0.2] = np.inf
        pairs = FeasiblePairSet.from_matrix(cost)
        a, b = solve_assignment(pairs), brute_force_assignment(pairs)
        if len(a) != len(b) or a.total_cost != b.total_cost:
            mismatches += 1
    elapsed = time.perf_counter() - t0
    verdict(1, "assignment optimality", mismatches == 0 and elapsed < 5.0,
            f"200 instances, {mismatches} mismatches, {elapsed:.2f}s")


# 2 -------------------------------------------------------------------------


def test_02_shortest_path_oracle():
    rng = np.random.default_rng(7)
    bad = 0
    for _ in range(20):
        net = random_strong_graph(50, 100, rng)
        # dyadic edge times keep every path sum exact in floating point
        et = rng.integers(1, 256, (HOURS, net.n_edges)) / 16.0
        tensor = all_pairs_shortest_times(et, net)
        for h in (0, 11, 23):
            for s in range(net.n_nodes):
                if tensor.times[h, s].tolist() != dijkstra(net.n_nodes, net.src, net.dst, et[h], s):
                    bad += 1
    net = grid_network(20, 25, 0.4)
    et = speed_to_edge_times(net, np.linspace(22.0, 40.0, HOURS))
    t0 = time.perf_counter()
    big = all_pairs_shortest_times(et, net)
    elapsed = time.perf_counter() - t0
    verdict(2, "shortest-path oracle", bad == 0 and elapsed < 60.0 and big.times.shape == (HOURS, 500, 500),
            f"20 graphs, {bad} mismatched rows; 500-node tensor {elapsed:.1f}s")


# 3 -------------------------------------------------------------------------


def test_03_kpi_formulas():
    d1, d2 = dec(1, 1), dec(2, 4)
    rng = np.random.default_rng(3)
    recs = [ServedRecord(i, float(rng.uniform(0, 10)), float(rng.uniform(0, 15)), float(rng.uniform(0, 5)),
                         float(rng.uniform(0.5, 20)), int(rng.integers(0, 24)), str(rng.choice(["center", "outer"])))
            for i in range(500)]
    hours = [r.hour for r in recs] + [5] * 40
    zones = [r.zone for r in recs] + ["outer"] * 40
    rep = build_report(recs, hours, zones)
    err = max(abs(recompose(sl.values(), m) - rep.overall.value(m))
              for sl in (rep.by_hour, rep.by_zone) for m in ("apwt", "adm", "adec", "service_rate"))
    ok = abs(d1 - 0.150) <= 1e-9 and abs(d2 - 0.273) <= 1e-9 and err <= 1e-9
    verdict(3, "KPI formulas", ok, f"dec(1,1)={d1!r} dec(2,4)={d2!r} max recomposition error {err:.1e}")


# 4 -------------------------------------------------------------------------


def test_04_simulator_conservation():
    failures = []
    for seed in range(50):
        spec = SynthSpec(rows=5, cols=5, n_trips=300, fleet_size=4 + seed % 9,
                         preset=("uniform", "hotspot", "imbalanced_attraction", "two_zone")[seed % 4])
        inst = generate_synthetic_instance(spec, seed)
        cfg = SimConfig(inst.active_targets, t_max_pu=2.0 + seed % 7, t_max_queue=5.0 + seed % 11)
        res = run_day(inst.trips, inst.tensor(), inst.network, cfg, seed)
        n_served = int(np.count_nonzero(res.trip_state == SERVED))
        n_cancel = int(np.count_nonzero(res.trip_state == CANCELLED))
        if n_served + n_cancel != len(inst.trips):
            failures.append(f"seed {seed}: conservation")
        if not (res.state_counts.sum(axis=1) == res.fleet).all():
            failures.append(f"seed {seed}: state counts")
        if replay_report(res.events, inst.trips, inst.network) != res.report:
            failures.append(f"seed {seed}: replay")
    verdict(4, "simulator conservation", not failures, _rows(failures[:5]) or "50 days clean")


# 5 -------------------------------------------------------------------------

C5_SPEC = SynthSpec(preset="hotspot", n_trips=3000, fleet_size=40)
C5_GRID = (0.5, 1.0, 2.0, 4.0, 6.0, 8.0, 16.0)


def test_05_service_rate_threshold():
    inst = generate_synthetic_instance(C5_SPEC, 1)
    tensor = inst.tensor()
    peak_demand = np.bincount(inst.trips.request_hour, minlength=HOURS).max()
    table = []
    for tp in C5_GRID:
        cfg = SimConfig(inst.active_targets, t_max_pu=tp, t_max_queue=20.0, record_events=False)
        mc = monte_carlo(inst.trips, tensor, inst.network, cfg, n_runs=5, seed=0, stage="c5")
        sr = [r.service_rate for r in mc.reports]
        q = float(np.mean([r.overall.queue for r in mc.reports]))
        table.append((tp, min(sr), float(np.mean(sr)), q))
    full = [min_sr == 1.0 for _, min_sr, _, _ in table]
    # threshold: first grid value from which every run serves every trip
    idx = next((i for i in range(len(full)) if all(full[i:])), None)
    ok = idx is not None and 0 < idx and all(mean_sr < 1.0 for _, _, mean_sr, _ in table[:idx]) \
        and all(q < 1.5 for _, _, _, q in table[idx:])
    detail = ", ".join(f"tpu={tp:g}: SR={m:.4f} queue={q:.2f}" for tp, _, m, q in table)
    thr = C5_GRID[idx] if idx is not None else None
    verdict(5, "service-rate threshold", ok, f"threshold={thr}; peak hour requests={peak_demand}; {detail}")


# 6 -------------------------------------------------------------------------


def test_06_calibration_recovery():
    net = grid_network(4, 4, 0.5)
    rng = np.random.default_rng(6)
    truth = 60.0 * net.length_km[None, :] / rng.uniform(18.0, 45.0, (HOURS, net.n_edges))
    tensor = all_pairs_shortest_times(truth, net)
    od = [(o, d) for o in range(net.n_nodes) for d in range(net.n_nodes) if o != d]
    X = np.array([(o, d, h) for h in range(HOURS) for o, d in od])
    y = tensor.times[X[:, 2], X[:, 0], X[:, 1]]
    est = EdgeTimeCalibrator(net, max_iter=400).fit(X, y)
    rel = [float(np.sqrt(np.mean((est.edge_times_[h] - truth[h]) ** 2)) / truth[h].mean()) for h in range(HOURS)]
    mono = all((np.diff(est.loss_history_[h]) <= 1e-12).all() for h in range(HOURS))
    verdict(6, "calibration recovery", max(rel) < 0.10 and mono,
            f"worst hourly relative RMSE {max(rel):.4f}; loss non-increasing: {mono}")


# 7 -------------------------------------------------------------------------


def test_07_mfd():
    n = np.linspace(500, 25000, 50)
    reg = MfdRegressor("linear").fit(n, 36.998 - 0.000202 * n)
    A, B = reg.params_
    v0 = speed_at(REFERENCE_MFD, 0)
    ok = abs(A - 36.998) <= 1e-6 and abs(B + 0.000202) <= 1e-9 and abs(reg.r2_ - 1.0) <= 1e-12 and v0 == 36.998
    verdict(7, "MFD fit", ok, f"A={A!r} B={B!r} R2={reg.r2_!r} v(0)={v0!r}")


# 8 -------------------------------------------------------------------------

C8_SPEC = SynthSpec(preset="hotspot", n_trips=6000, fleet_size=80)


def test_08_fleet_sweep_direction():
    inst = generate_synthetic_instance(C8_SPEC, 1)
    cfg = SimConfig(inst.active_targets, t_max_pu=8.0, t_max_queue=20.0, record_events=False)
    pts = run_fleet_sweep(inst.trips, inst.tensor(), inst.network, cfg, mfd_model=REFERENCE_MFD, n_runs=30, seed=0)
    apwt = [p.summary["apwt"].mean for p in pts]
    factors = [p.factor for p in pts]
    sr08 = pts[0].summary["service_rate"].mean
    nonincr = all(b <= a for a, b in zip(apwt[1:], apwt[2:]))
    gains = [a - b for a, b in zip(apwt, apwt[1:])]
    # upper half of 0.8..2.0: improvements for the steps from 1.4 to 2.0
    upper = gains[factors.index(1.4) - 1:]
    shrinking = all(b <= a for a, b in zip(upper, upper[1:]))
    ok = nonincr and sr08 < 1.0 and shrinking
    # paired view (common random numbers across factors): does any gain rise beyond run-to-run noise?
    runs = np.array([p.summary["apwt"].values for p in pts])
    run_gains = runs[:-1] - runs[1:]
    lo = factors.index(1.4) - 1
    for k in range(lo, len(run_gains) - 1):
        s = t_interval(run_gains[k + 1] - run_gains[k])
        print(f"INFO        8 gain change {factors[k + 1]:g}->{factors[k + 2]:g} minus {factors[k]:g}->{factors[k + 1]:g}: "
              f"{s.mean:+.4f} [{s.ci_low:+.4f}, {s.ci_high:+.4f}]")
    detail = (f"SR(0.8)={sr08:.5f}; APWT " + " ".join(f"{f:g}:{a:.4f}" for f, a in zip(factors, apwt))
              + "; upper-half gains " + " ".join(f"{g:.4f}" for g in upper))
    verdict(8, "fleet sweep direction", ok, detail)


# 9 -------------------------------------------------------------------------

C9_SPEC = SynthSpec(preset="two_zone", n_trips=3000, fleet_size=40)


def test_09_geofencing_direction():
    inst = generate_synthetic_instance(C9_SPEC, 2)
    cfg = SimConfig(inst.active_targets, t_max_pu=8.0, t_max_queue=20.0, record_events=False)
    res = run_geofencing(inst.trips, inst.tensor(), inst.network, cfg, "basic", n_runs=30, seed=0)
    parts, ok = [], True
    for m in ("apwt", "adm", "adec"):
        c = paired_difference([a[m] for a in res.aggregate], [u.overall.value(m) for u in res.unified])
        ok &= c.ci_low >= 0
        parts.append(f"geofenced-unified {m} {c.mean_diff:+.4f} [{c.ci_low:+.4f}, {c.ci_high:+.4f}]")
    c = paired_difference([s.apwt for s in res.operators[1]], [s.apwt for s in res.unified_slices["center-center"]])
    ok &= c.ci_high <= 0
    parts.append(f"op1 - unified center-center APWT {c.mean_diff:+.4f} [{c.ci_low:+.4f}, {c.ci_high:+.4f}]")
    verdict(9, "geofencing direction", ok, _rows(parts))


# 10 ------------------------------------------------------------------------

C10_SPEC = SynthSpec(preset="imbalanced_attraction", n_trips=8000, fleet_size=80, hotspot_weight=0.0,
                     sink_weight=0.3, sink_layout="scattered", sink_profile="peak")


def test_10_demand_management_direction():
    inst = generate_synthetic_instance(C10_SPEC, 3)
    cfg = SimConfig(inst.active_targets, t_max_pu=8.0, t_max_queue=60.0, record_events=False)
    outs = run_demand_experiment(inst.trips, inst.tensor(), inst.network, cfg,
                                 parse_scenarios(["random", "O**D01"], 2000), n_runs=30, seed=0, alpha=0.01)
    target = next(o for o in outs if o.label.name == "O**D01")
    t = target.tests
    apwt_ok = target.feasible and t["apwt"].significant and t["apwt"].mean_diff < 0
    null_ok = target.feasible and not t["adm"].significant and not t["adec"].significant
    detail = _rows(f"{m} diff {t[m].mean_diff:+.4f} p={t[m].p_value:.3g}" for m in ("apwt", "adm", "adec"))
    print(f"ACCEPTANCE 10a {'PASS' if apwt_ok else 'FAIL'} O**D01 deletion lowers APWT vs random at 99%")
    print(f"ACCEPTANCE 10b {'PASS' if null_ok else 'FAIL'} no significant ADM/ADEC difference at 99%")
    no_increase = all(not (t[m].significant and t[m].mean_diff > 0) for m in ("adm", "adec"))
    print(f"INFO       10c one-sided reading (ADM/ADEC not significantly higher): {no_increase}")
    verdict(10, "demand-management direction", apwt_ok and null_ok, detail)


# 11 ------------------------------------------------------------------------

_DLAT = 0.5 / 111.19492664455873


def _trace(status, times, steps):
    return [GpsPoint("taxi", float(t), 30.6 + k * _DLAT, 104.06, s) for t, k, s in zip(times, steps, status)]


def test_11_deadheading_extraction():
    occ = extract_deadheading(_trace(["occupied"] * 3, [0, 60, 120], [0, 1, 2])).days[0]
    dh = extract_deadheading(_trace(["deadheading"] * 3, [0, 60, 120], [0, 1, 2])).days[0]
    gap = extract_deadheading(_trace(["deadheading"] * 3, [0, 400, 460], [0, 1, 2])).days[0]
    ok = ((occ.deadheading_time_min, occ.deadheading_distance_km) == (0.0, 0.0)
          and dh.deadheading_time_min == 2.0 and abs(dh.deadheading_distance_km - 1.0) < 1e-9
          and (gap.deadheading_time_min, gap.deadheading_distance_km) == (0.0, 0.0))
    verdict(11, "deadheading extraction", ok,
            f"occupied {occ.deadheading_time_min}/{occ.deadheading_distance_km}; "
            f"3-point {dh.deadheading_time_min}/{dh.deadheading_distance_km:.9f}; "
            f"400s gap {gap.deadheading_time_min}/{gap.deadheading_distance_km}")


# 12 ------------------------------------------------------------------------

_SMALL = {"rows": 5, "cols": 5, "n_trips": 400, "fleet_size": 12}
C12_RUNS = {
    "simulate": ["--synth", json.dumps({**_SMALL, "preset": "hotspot"}), "--t-max-pu", "[4, 8]", "--events"],
    "sweep": ["--synth", json.dumps({**_SMALL, "preset": "hotspot"}), "--mfd",
              json.dumps({"family": "linear", "params": [36.998, -0.000202]})],
    "geofence": ["--synth", json.dumps({**_SMALL, "preset": "two_zone"})],
    "demand": ["--synth", json.dumps({**_SMALL, "preset": "imbalanced_attraction"}),
               "--scenarios", '["random", "O**D01", "peak"]', "--deletion-count", "20"],
    "calibrate": ["--synth", json.dumps({**_SMALL, "preset": "uniform", "rows": 3, "cols": 3}),
                  "--calibration", '{"max_iter": 30}'],
    "baseline": ["--synth", json.dumps({**_SMALL, "preset": "uniform"})],
}


def test_12_determinism(tmp_path):
    diffs = []
    for verb, extra in C12_RUNS.items():
        dirs = []
        for k in range(2):
            out = tmp_path / f"{verb}-{k}"
            code = cli_main([verb, *extra, "--runs", "3", "--seed", "11", "--out", str(out)])
            if code != 0:
                diffs.append(f"{verb}: exit {code}")
            dirs.append(out)
        names = sorted(p.name for p in dirs[0].iterdir()) if dirs[0].exists() else []
        if not any(n.endswith(".csv") for n in names):
            diffs.append(f"{verb}: no CSV output")
        _, mismatch, errors = filecmp.cmpfiles(dirs[0], dirs[1], names, shallow=False)
        diffs += [f"{verb}/{n}" for n in mismatch + errors]
    verdict(12, "determinism", not diffs, _rows(diffs) or f"{len(C12_RUNS)} experiments byte-identical")
