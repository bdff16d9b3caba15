from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hailsim.network import grid_network
from hailsim.policy import (
    SWEEP_FACTORS,
    InfeasibleScenario,
    NodeClassifier,
    ScenarioLabel,
    classify_nodes,
    generate_demand_scenario,
    label_trip,
    largest_remainder,
    parse_scenarios,
    partition_geofence,
    run_fleet_sweep,
    run_geofencing,
    standard_scenarios,
    trip_zone_rule,
    welch_test,
)
from hailsim.simulator import SimConfig, TripTable


def _z_oracle(counts):
    logc = [np.log(max(c, 1.0)) for c in counts]
    m = sum(logc) / len(logc)
    sd = (sum((v - m) ** 2 for v in logc) / len(logc)) ** 0.5
    return [(v - m) / sd if sd else 0.0 for v in logc]


def test_classification_matches_zscore_oracle():
    oc = [1, 2, 3, 5, 8, 13, 200, 400]
    dc = [400, 1, 1, 1, 1, 1, 1, 1]
    labels = classify_nodes(oc, dc)
    z = _z_oracle(oc)
    assert [l.is_high_demand for l in labels] == [int(v >= 1.2816) for v in z]
    assert [l.is_high_attraction for l in labels] == [1, 0, 0, 0, 0, 0, 0, 0]


def test_constant_counts_label_nothing():
    labels = classify_nodes([5] * 6, [0] * 6)
    assert not any(l.is_high_demand or l.is_high_attraction for l in labels)


@settings(max_examples=100)
@given(st.lists(st.integers(1, 10**4), min_size=2, max_size=40), st.integers(1, 50))
def test_labels_invariant_to_count_scaling(counts, k):
    a = classify_nodes(counts, counts)
    b = classify_nodes([c * k for c in counts], [c * k for c in counts])
    assert a == b


def test_node_classifier_tags_trips():
    trips = TripTable.from_arrays([8 * 60.0] * 20 + [12 * 60.0], [0] * 20 + [1], [1] * 20 + [0])
    clf = NodeClassifier(n_nodes=10).fit(trips)
    tags = clf.transform(trips)
    assert tags.shape == (21, 5)
    assert tags[0].tolist() == [1, 0, 0, 1, 1] and tags[-1, 4] == 0
    tag = label_trip(0, 1, 8 * 60.0, clf.labels_)
    assert tag.spatial == "O10D01" and tag.peak


def test_scenarios():
    assert len(standard_scenarios()) == 19
    s = parse_scenarios(["random", "peak", "O**D01", {"kind": "spatial", "pattern": "O11D00", "deletion_count": 3}], 5)
    assert [x.name for x in s] == ["random", "peak", "O**D01", "O11D00"] and s[3].deletion_count == 3
    with pytest.raises(ValueError):
        ScenarioLabel("spatial", "O2D01")
    tags = np.array([[0, 0, 0, 1, 0], [1, 0, 0, 1, 1], [0, 0, 1, 0, 0]])
    assert ScenarioLabel("spatial", "O**D01").matches(tags).tolist() == [True, True, False]
    trips = TripTable.from_arrays([1.0, 2.0, 3.0], [0, 1, 2], [1, 2, 0])
    out = generate_demand_scenario(trips, ScenarioLabel("spatial", "O**D01", 2), tags, 0)
    assert len(out) == 1 and out.request_time.tolist() == [3.0]
    with pytest.raises(InfeasibleScenario):
        generate_demand_scenario(trips, ScenarioLabel("spatial", "O**D01", 3), tags, 0)


def test_largest_remainder():
    assert largest_remainder(1000, [0.375, 0.25, 0.375]) == [375, 250, 375]
    assert largest_remainder(10, [1, 1, 1]) == [4, 3, 3]
    assert largest_remainder(0, [1, 2]) == [0, 0]


@settings(max_examples=200)
@given(st.integers(0, 10**5), st.lists(st.floats(0.01, 100), min_size=1, max_size=8))
def test_largest_remainder_properties(total, w):
    out = largest_remainder(total, w)
    assert sum(out) == total
    q = [total * x / sum(w) for x in w]
    assert all(abs(o - x) < 1 + 1e-6 for o, x in zip(out, q))


def test_welch_test():
    t = welch_test([1.0, 2.0, 3.0, 4.0], [1.0, 2.0, 3.0, 4.0])
    assert t.p_value == 1.0 and not t.significant
    t = welch_test([10.0, 10.1, 9.9, 10.05], [1.0, 1.1, 0.9, 1.05])
    assert t.significant and t.mean_diff == pytest.approx(9.0)


@pytest.fixture(scope="module")
def two_zone():
    from hailsim.synth import SynthSpec, generate_synthetic_instance

    inst = generate_synthetic_instance(SynthSpec(rows=6, cols=6, preset="two_zone", n_trips=400, fleet_size=16), 1)
    return inst, inst.tensor()


def test_zone_rules_partition(two_zone):
    inst, _ = two_zone
    rules = trip_zone_rule(inst.trips, inst.network)
    assert set(rules) <= {"center-center", "outer-outer", "cross"}
    cfg = SimConfig(inst.active_targets)
    part = partition_geofence(inst.trips, inst.network, cfg)
    assert sum(len(t) for t in part.trips) == len(inst.trips)
    assert sum(part.fleets) == cfg.fleet
    for h in range(24):
        assert sum(t[h] for t in part.targets) == cfg.targets[h]
    with pytest.raises(ValueError):
        trip_zone_rule(inst.trips, grid_network(6, 6))


def test_geofencing_rows(two_zone):
    inst, tensor = two_zone
    res = run_geofencing(inst.trips, tensor, inst.network, SimConfig(inst.active_targets, t_max_pu=8), n_runs=2, seed=1)
    groups = {r[0] for r in res.rows()}
    assert {"unified", "geofenced", "operator1", "unified:center-center", "geofenced-minus-unified"} <= groups


def test_sweep_shape(small_instance):
    inst, tensor = small_instance
    pts = run_fleet_sweep(inst.trips, tensor, inst.network, SimConfig(inst.active_targets, t_max_pu=8),
                          factors=(0.8, 1.0, 1.2), n_runs=2, seed=0)
    assert [p.factor for p in pts] == [0.8, 1.0, 1.2]
    assert pts[1].normalized["apwt"] == 1.0
    assert len(SWEEP_FACTORS) == 13 and SWEEP_FACTORS[-1] == 2.0


def test_unit_factor_matches_baseline(small_instance):
    from hailsim.mfd import MfdModel
    from hailsim.simulator import monte_carlo

    inst, tensor = small_instance
    cfg = SimConfig(inst.active_targets, t_max_pu=8, record_events=False)
    pts = run_fleet_sweep(inst.trips, tensor, inst.network, cfg, factors=(1.0,),
                          mfd_model=MfdModel("linear", (36.998, -0.000202)), n_runs=2, seed=4)
    base = monte_carlo(inst.trips, tensor, inst.network, cfg, n_runs=2, seed=4)
    assert pts[0].reports == base.reports


def test_fine_tuned_identity_equals_basic(two_zone):
    inst, tensor = two_zone
    cfg = SimConfig(inst.active_targets, t_max_pu=8, record_events=False)
    a = run_geofencing(inst.trips, tensor, inst.network, cfg, "basic", n_runs=2, seed=3)
    b = run_geofencing(inst.trips, tensor, inst.network, cfg, "fine-tuned", n_runs=2, seed=3)
    assert a.rows() == b.rows()


def test_deletion_keeps_other_trips(small_instance):
    inst, _ = small_instance
    tags = NodeClassifier(inst.network.n_nodes).fit(inst.trips).transform(inst.trips)
    out = generate_demand_scenario(inst.trips, ScenarioLabel("random", "", 50), tags, 1)
    kept = set(out.trip_id.tolist())
    assert len(inst.trips) - len(out) == 50 and kept <= set(inst.trips.trip_id.tolist())
    idx = np.isin(inst.trips.trip_id, out.trip_id)
    np.testing.assert_array_equal(inst.trips.request_time[idx], out.request_time)
    np.testing.assert_array_equal(inst.trips.origin[idx], out.origin)
