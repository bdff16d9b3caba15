from __future__ import annotations

import filecmp

import numpy as np
import pytest

from hailsim.simulator import SimConfig, run_day
from hailsim.synth import SynthSpec, active_targets, diurnal_weights, generate_synthetic_instance, synthetic_gps


def test_minimal_instance_runs():
    inst = generate_synthetic_instance(SynthSpec(rows=1, cols=2, n_trips=1, fleet_size=1), 0)
    assert inst.network.n_nodes == 2 and len(inst.trips) == 1
    res = run_day(inst.trips, inst.tensor(), inst.network, SimConfig(inst.active_targets), 0)
    assert res.report.overall.n_total == 1


def test_same_seed_same_files(tmp_path):
    spec = SynthSpec(rows=4, cols=4, n_trips=200, preset="hotspot")
    generate_synthetic_instance(spec, 9).write(tmp_path / "a")
    generate_synthetic_instance(spec, 9).write(tmp_path / "b")
    generate_synthetic_instance(spec, 10).write(tmp_path / "c")
    names = ["nodes.csv", "edges.csv", "trips.csv", "fleet.csv", "edge_times.csv", "spec.json"]
    match, mismatch, _ = filecmp.cmpfiles(tmp_path / "a", tmp_path / "b", names, shallow=False)
    assert sorted(match) == sorted(names) and not mismatch
    assert not filecmp.cmp(tmp_path / "a" / "trips.csv", tmp_path / "c" / "trips.csv", shallow=False)


def test_hotspot_share():
    inst = generate_synthetic_instance(SynthSpec(n_trips=5000, preset="hotspot", hotspot_weight=0.9), 2)
    share = np.isin(inst.trips.origin, inst.hotspot_nodes).mean()
    # expected hotspot mass: the weight itself plus the uniform floor's share on the 4 hotspots
    expected = 0.9 + 0.1 * 4 / 100
    assert share == pytest.approx(expected, abs=1 / 5000)
    assert share >= 0.9


def test_diurnal_curve_is_bimodal():
    w = diurnal_weights(SynthSpec())
    assert w.argmax() in (8, 18) and w[3] < w[8] and w[3] < w[18]
    t = active_targets(SynthSpec(fleet_size=100))
    assert max(t) == 100 and min(t) >= 50


def test_imbalanced_attraction_sinks():
    inst = generate_synthetic_instance(SynthSpec(preset="imbalanced_attraction", n_trips=4000), 1)
    sinks = inst.sink_nodes
    assert len(sinks) == 9
    o = np.isin(inst.trips.origin, sinks).mean()
    d = np.isin(inst.trips.destination, sinks).mean()
    assert d > 0.25 and o < 0.05


def test_bad_spec():
    with pytest.raises(ValueError):
        SynthSpec(rows=1, cols=1)
    with pytest.raises(ValueError):
        SynthSpec(preset="nope")


def test_gps_is_deterministic():
    inst = generate_synthetic_instance(SynthSpec(rows=4, cols=4, n_trips=100), 1)
    a = synthetic_gps(inst, n_taxis=5, seed=2)
    assert a == synthetic_gps(inst, n_taxis=5, seed=2)
    assert {p[4] for p in a} == {"deadheading", "occupied"}
