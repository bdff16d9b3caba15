from __future__ import annotations

import numpy as np
import pytest

from hailsim.mfd import (
    MfdModel,
    MfdRegressor,
    aggregate_points,
    fit_models,
    read_points_csv,
    scale_travel_times,
    speed_at,
    write_points_csv,
)
from hailsim.network import HOURS, all_pairs_shortest_times, grid_network, speed_to_edge_times


def test_reference_linear_model():
    assert speed_at(MfdModel("linear", (36.998, -0.000202)), 0) == pytest.approx(36.998, abs=1e-12)


def test_exact_linear_recovery():
    n = np.linspace(1000, 20000, 40)
    v = 36.998 - 0.000202 * n
    reg = MfdRegressor("linear").fit(n, v)
    A, B = reg.params_
    assert abs(A - 36.998) < 1e-6 and abs(B + 0.000202) < 1e-9
    assert reg.r2_ == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("family,params", [
    ("exponential", (30.0, 1e-4, 8.0)),
    ("power", (90.0, -0.2, 0.0)),
    ("log-shift", (60.0, 3.0, 50.0)),
])
def test_nonlinear_families_fit_own_data(family, params):
    n = np.linspace(500, 15000, 60)
    v = MfdModel(family, params, speed_bounds=(-1e9, 1e9)).speed(n)
    reg = MfdRegressor(family).fit(n, v)
    assert reg.r2_ > 0.999


def test_speed_is_clamped():
    m = MfdModel("linear", (36.998, -0.000202))
    assert speed_at(m, 1e7) == 5.0
    assert speed_at(MfdModel("linear", (200.0, 0.0)), 0) == 80.0


def test_constant_speed_r2_zero():
    assert MfdRegressor().fit([1, 2, 3], [20, 20, 20]).r2_ == 0.0


def test_fit_models_and_json(tmp_path):
    n = np.linspace(1000, 9000, 20)
    pts = aggregate_points([(i, 0.0, 30.0, 15.0) for i in range(10)])
    assert len(pts) == 1 and pts[0].n_taxi == pytest.approx(10) and pts[0].v == pytest.approx(30.0)
    assert pts[0].n == pytest.approx(100)
    write_points_csv(pts, tmp_path / "p.csv")
    assert read_points_csv(tmp_path / "p.csv") == pts
    models = fit_models([type(pts[0])(0.0, x / 10, x, 36.998 - 0.000202 * x) for x in n])
    assert models["linear"].r2 == pytest.approx(1.0)
    models["linear"].save(tmp_path / "m.json")
    assert MfdModel.load(tmp_path / "m.json").params == models["linear"].params


def test_leg_split_across_intervals():
    pts = aggregate_points([("a", 20.0, 20.0, 10.0)], interval=30.0)
    assert [p.interval_start for p in pts] == [0.0, 30.0]
    assert pts[0].n_taxi == pytest.approx(10 / 30) and pts[1].n_taxi == pytest.approx(10 / 30)
    assert pts[0].v == pytest.approx(30.0) and pts[1].v == pytest.approx(30.0)


def test_scaling_slows_travel_when_fleet_grows():
    net = grid_network(3, 3, 1.0)
    t = all_pairs_shortest_times(speed_to_edge_times(net, np.full(HOURS, 30.0)), net)
    m = MfdModel("linear", (36.998, -0.000202))
    same = scale_travel_times(t, net, m, 5000, 5000)
    assert same is t
    up = scale_travel_times(t, net, m, 5000, 10000)
    ratio = m.speed(5000) / m.speed(10000)
    np.testing.assert_allclose(up.times[3], t.times[3] * ratio, rtol=1e-12)
    base = np.full(HOURS, 5000.0)
    scaled = base.copy()
    scaled[7] = 10000.0
    part = scale_travel_times(t, net, m, base, scaled)
    np.testing.assert_array_equal(part.times[6], t.times[6])
    assert (part.times[7] >= t.times[7]).all()


def test_linear_residuals_satisfy_normal_equations():
    rng = np.random.default_rng(0)
    n = rng.uniform(1000, 20000, 80)
    v = 35 - 0.0002 * n + rng.normal(0, 2, 80)
    A, B = MfdRegressor("linear").fit(n, v).params_
    r = v - (A + B * n)
    assert abs(r.sum()) < 1e-6 and abs((n * r).sum()) / n.mean() < 1e-6


def test_halved_speed_doubles_tensor():
    net = grid_network(3, 3, 1.0)
    t = all_pairs_shortest_times(speed_to_edge_times(net, np.full(HOURS, 30.0)), net)
    m = MfdModel("linear", (40.0, -0.001))  # v(0) = 40, v(20000) = 20
    out = scale_travel_times(t, net, m, 0.0, 20000.0)
    np.testing.assert_allclose(out.times, 2 * t.times, rtol=1e-12)
